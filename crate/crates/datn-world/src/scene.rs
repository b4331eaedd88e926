//! Scene layout and rendering. A scene is a square RGB canvas divided
//! into 4x4-pixel grid cells; each object occupies exactly one cell.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Pixels per grid cell along each axis.
pub const CELL_PIXELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Brown,
}

impl Color {
    pub const ALL: [Color; 5] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Brown,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Brown => "brown",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::Brown => [0.55, 0.27, 0.07],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectSize {
    Small,
    Large,
}

impl ObjectSize {
    pub const ALL: [ObjectSize; 2] = [ObjectSize::Small, ObjectSize::Large];

    pub fn word(self) -> &'static str {
        match self {
            ObjectSize::Small => "small",
            ObjectSize::Large => "large",
        }
    }
}

/// Coarse location of a grid cell: the four quadrants plus a central
/// block (the middle 2x2 cells of the grid).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Middle,
}

impl Zone {
    pub const ALL: [Zone; 5] = [
        Zone::TopLeft,
        Zone::TopRight,
        Zone::BottomLeft,
        Zone::BottomRight,
        Zone::Middle,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Zone::TopLeft => "top-left",
            Zone::TopRight => "top-right",
            Zone::BottomLeft => "bottom-left",
            Zone::BottomRight => "bottom-right",
            Zone::Middle => "middle",
        }
    }

    pub fn of_cell(row: usize, col: usize, grid_h: usize, grid_w: usize) -> Zone {
        let mid_row = row + 1 >= grid_h / 2 && row <= grid_h / 2;
        let mid_col = col + 1 >= grid_w / 2 && col <= grid_w / 2;
        if mid_row && mid_col {
            Zone::Middle
        } else {
            match (row < grid_h / 2, col < grid_w / 2) {
                (true, true) => Zone::TopLeft,
                (true, false) => Zone::TopRight,
                (false, true) => Zone::BottomLeft,
                (false, false) => Zone::BottomRight,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub row: usize,
    pub col: usize,
    pub size: ObjectSize,
}

/// One generated scene. The canvas is stored channels-first
/// (`[3, side, side]`, row-major) with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub side: usize,
    pub objects: Vec<SceneObject>,
    pub canvas: Vec<f64>,
}

/// 4x4 per-cell bitmaps; six distinct silhouettes so every
/// (shape, size) pair is visually separable.
fn cell_mask(shape: Shape, size: ObjectSize) -> [[u8; 4]; 4] {
    match (shape, size) {
        (Shape::Square, ObjectSize::Large) => [
            [1, 1, 1, 1],
            [1, 1, 1, 1],
            [1, 1, 1, 1],
            [1, 1, 1, 1],
        ],
        (Shape::Square, ObjectSize::Small) => [
            [0, 0, 0, 0],
            [0, 1, 1, 0],
            [0, 1, 1, 0],
            [0, 0, 0, 0],
        ],
        (Shape::Circle, ObjectSize::Large) => [
            [0, 1, 1, 0],
            [1, 1, 1, 1],
            [1, 1, 1, 1],
            [0, 1, 1, 0],
        ],
        (Shape::Circle, ObjectSize::Small) => [
            [0, 1, 1, 0],
            [1, 0, 0, 1],
            [1, 0, 0, 1],
            [0, 1, 1, 0],
        ],
        (Shape::Triangle, ObjectSize::Large) => [
            [1, 0, 0, 0],
            [1, 1, 0, 0],
            [1, 1, 1, 0],
            [1, 1, 1, 1],
        ],
        (Shape::Triangle, ObjectSize::Small) => [
            [0, 0, 0, 0],
            [0, 1, 0, 0],
            [0, 1, 1, 0],
            [0, 0, 0, 0],
        ],
    }
}

impl Scene {
    /// Grid height/width in cells for a given canvas side.
    pub fn grid_for_side(side: usize) -> usize {
        side / CELL_PIXELS
    }

    /// Draws object placements from `rng` and renders the canvas.
    /// `max_objects` must not exceed the cell count.
    pub fn generate(
        rng: &mut ChaCha8Rng,
        seed: u64,
        side: usize,
        max_objects: usize,
    ) -> Scene {
        let grid = Self::grid_for_side(side);
        let cells = grid * grid;
        debug_assert!(max_objects <= cells);
        let count = rng.gen_range(1..=max_objects);

        // Partial Fisher-Yates for distinct cells.
        let mut slots: Vec<usize> = (0..cells).collect();
        for i in 0..count {
            let j = rng.gen_range(i..cells);
            slots.swap(i, j);
        }

        let mut objects = Vec::with_capacity(count);
        for &slot in slots.iter().take(count) {
            let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
            let color = Color::ALL[rng.gen_range(0..Color::ALL.len())];
            let size = ObjectSize::ALL[rng.gen_range(0..ObjectSize::ALL.len())];
            objects.push(SceneObject {
                shape,
                color,
                row: slot / grid,
                col: slot % grid,
                size,
            });
        }

        let canvas = render_canvas(&objects, side);
        Scene {
            seed,
            side,
            objects,
            canvas,
        }
    }

    /// Rebuilds a scene from its stored placement (used when loading).
    pub fn from_objects(seed: u64, side: usize, objects: Vec<SceneObject>) -> Scene {
        let canvas = render_canvas(&objects, side);
        Scene {
            seed,
            side,
            objects,
            canvas,
        }
    }

    pub fn grid(&self) -> usize {
        Self::grid_for_side(self.side)
    }

    pub fn zone_of(&self, object: &SceneObject) -> Zone {
        let g = self.grid();
        Zone::of_cell(object.row, object.col, g, g)
    }
}

pub fn render_canvas(objects: &[SceneObject], side: usize) -> Vec<f64> {
    let mut canvas = vec![0.0; 3 * side * side];
    for obj in objects {
        let mask = cell_mask(obj.shape, obj.size);
        let rgb = obj.color.rgb();
        for (my, row) in mask.iter().enumerate() {
            for (mx, &on) in row.iter().enumerate() {
                if on == 1 {
                    let y = obj.row * CELL_PIXELS + my;
                    let x = obj.col * CELL_PIXELS + mx;
                    for (ch, &v) in rgb.iter().enumerate() {
                        canvas[(ch * side + y) * side + x] = v;
                    }
                }
            }
        }
    }
    canvas
}
