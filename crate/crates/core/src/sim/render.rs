//! Deterministic grayscale rasterization of simulator screens.
//!
//! Layout (default 96×160):
//! - rows 0..4: status bar, screen id as 16 bits of 6-pixel black/white blocks
//! - rows 6..14: title glyphs
//! - one 8-pixel text row per element starting at row 22, pitch 10
//! - toggle state and input value marks in a narrow column at x = 82..91
//!
//! The background is a 9×8 block pattern specific to `(app, screen)` whose
//! horizontally adjacent blocks differ by at least [`LEVEL_GAP`]. Text is
//! drawn at low contrast and state marks touch at most nine pixels per element,
//! so a data-state change never moves a block mean across its neighbour.

use std::fmt;
use std::io::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{ElementKind, FieldValue, SimAppSpec, SimScreenSpec};
use super::EnvState;
use crate::hashing::{derive_seed, fnv1a64, sha256_hex};

pub const DEFAULT_WIDTH: usize = 96;
pub const DEFAULT_HEIGHT: usize = 160;

const LEVELS: [u8; 4] = [40, 95, 150, 205];
pub const LEVEL_GAP: u8 = 55;
const TEXT_CONTRAST: u8 = 16;
const MARK_CONTRAST: u8 = 40;
const STATUS_ROWS: usize = 4;
const STATUS_BITS: usize = 16;
pub const ROW_TOP: usize = 22;
pub const ROW_PITCH: usize = 10;
pub const ROW_HEIGHT: usize = 8;
const TEXT_X: usize = 4;
const MAX_CHARS: usize = 12;
pub const MARK_X: usize = 82;

/// Row-major 8-bit grayscale image.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelGrid {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl fmt::Debug for PixelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PixelGrid({}x{}, key={})",
            self.width,
            self.height,
            self.content_key()
        )
    }
}

impl PixelGrid {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    /// Content address used by the render store.
    pub fn content_key(&self) -> String {
        let mut bytes = Vec::with_capacity(self.pixels.len() + 16);
        bytes.extend_from_slice(&(self.width as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.height as u64).to_le_bytes());
        bytes.extend_from_slice(&self.pixels);
        sha256_hex(&bytes, 32)
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Option<Self> {
        // Header is three whitespace-separated tokens after the magic.
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return None;
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return None;
        }
        let width: usize = fields[1].parse().ok()?;
        let height: usize = fields[2].parse().ok()?;
        let data = bytes.get(pos + 1..)?;
        if data.len() != width * height {
            return None;
        }
        Some(Self {
            width,
            height,
            pixels: data.to_vec(),
        })
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header().expect("png header");
            writer.write_image_data(&self.pixels).expect("png data");
        }
        out
    }

    /// Copy with a one-pixel white rectangle outline, used to mark action areas.
    pub fn with_outline(&self, x: usize, y: usize, w: usize, h: usize) -> Self {
        let mut out = self.clone();
        if w == 0 || h == 0 {
            return out;
        }
        let x1 = (x + w - 1).min(self.width - 1);
        let y1 = (y + h - 1).min(self.height - 1);
        for xx in x..=x1 {
            out.set(xx, y, 255);
            out.set(xx, y1, 255);
        }
        for yy in y..=y1 {
            out.set(x, yy, 255);
            out.set(x1, yy, 255);
        }
        out
    }
}

/// Writes PGM bytes to `path`.
pub fn write_pgm(grid: &PixelGrid, path: &std::path::Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&grid.to_pgm())
}

/// Bounding box `[x, y, w, h]` of element row `index`.
pub fn element_bounds(index: usize) -> [usize; 4] {
    [0, ROW_TOP + ROW_PITCH * index, DEFAULT_WIDTH, ROW_HEIGHT]
}

fn cell_edges(len: usize, cells: usize) -> Vec<usize> {
    (0..=cells).map(|i| i * len / cells).collect()
}

fn background_levels(app: &str, screen_id: u32) -> [[u8; 9]; 8] {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        0,
        &[b"layout", app.as_bytes(), &screen_id.to_le_bytes()],
    ));
    let mut levels = [[0u8; 9]; 8];
    for row in levels.iter_mut() {
        let mut prev: Option<usize> = None;
        for cell in row.iter_mut() {
            let idx = loop {
                let i = rng.gen_range(0..LEVELS.len());
                if Some(i) != prev {
                    break i;
                }
            };
            prev = Some(idx);
            *cell = LEVELS[idx];
        }
    }
    levels
}

/// Shifts `bg` toward mid-gray by `amount`.
fn contrast(bg: u8, amount: u8) -> u8 {
    if bg < 128 {
        bg + amount
    } else {
        bg - amount
    }
}

fn glyph_columns(c: char) -> [u8; 5] {
    let h = fnv1a64(c.to_string().as_bytes());
    let mut cols = [0u8; 5];
    for (i, col) in cols.iter_mut().enumerate() {
        // 7 rows per column.
        *col = ((h >> (i * 7)) & 0x7f) as u8;
    }
    cols
}

fn draw_text(grid: &mut PixelGrid, bg: &PixelGrid, text: &str, x0: usize, y0: usize) {
    for (j, c) in text.chars().take(MAX_CHARS).enumerate() {
        let cols = glyph_columns(c);
        for (dx, col) in cols.iter().enumerate() {
            for dy in 0..7 {
                if (col >> dy) & 1 == 1 {
                    let (x, y) = (x0 + j * 6 + dx, y0 + dy);
                    if x < grid.width && y < grid.height {
                        grid.set(x, y, contrast(bg.get(x, y), TEXT_CONTRAST));
                    }
                }
            }
        }
    }
}

/// Rasterizes `screen` of `spec` in the data state `state`.
pub fn render_screen(
    spec: &SimAppSpec,
    screen: &SimScreenSpec,
    data: &std::collections::BTreeMap<String, FieldValue>,
) -> PixelGrid {
    let (w, h) = (DEFAULT_WIDTH, DEFAULT_HEIGHT);
    let levels = background_levels(&spec.app_name, screen.screen_id);
    let xs = cell_edges(w, 9);
    let ys = cell_edges(h, 8);
    let mut bg = PixelGrid::filled(w, h, 0);
    for r in 0..8 {
        for c in 0..9 {
            for y in ys[r]..ys[r + 1] {
                for x in xs[c]..xs[c + 1] {
                    bg.set(x, y, levels[r][c]);
                }
            }
        }
    }
    let mut grid = bg.clone();

    let block = w / STATUS_BITS;
    for bit in 0..STATUS_BITS {
        let on = (screen.screen_id >> (STATUS_BITS - 1 - bit)) & 1 == 1;
        for y in 0..STATUS_ROWS {
            for x in bit * block..(bit + 1) * block {
                grid.set(x, y, if on { 255 } else { 0 });
            }
        }
    }
    draw_text(&mut grid, &bg, &screen.title, TEXT_X, 6);

    for (i, el) in screen.elements.iter().enumerate() {
        let [_, y, _, _] = element_bounds(i);
        let prefix = match &el.kind {
            ElementKind::Nav { .. } => '>',
            ElementKind::Toggle { .. } => '#',
            ElementKind::Input { .. } => '_',
            ElementKind::Back => '<',
            ElementKind::Terminal => {
                if el.interactable {
                    '*'
                } else {
                    '.'
                }
            }
        };
        let text: String = std::iter::once(prefix).chain(el.label.chars()).collect();
        draw_text(&mut grid, &bg, &text, TEXT_X, y);
        match &el.kind {
            ElementKind::Toggle { field } => {
                if data
                    .get(field)
                    .and_then(FieldValue::as_bool)
                    .unwrap_or(false)
                {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (x, yy) = (MARK_X + 2 + dx, y + 2 + dy);
                            grid.set(x, yy, contrast(bg.get(x, yy), MARK_CONTRAST));
                        }
                    }
                }
            }
            ElementKind::Input { field } => {
                let value = data.get(field).and_then(FieldValue::as_text).unwrap_or("");
                let bits = fnv1a64(value.as_bytes());
                for i in 0..8 {
                    if (bits >> i) & 1 == 1 {
                        let (x, yy) = (MARK_X + i, y + 4);
                        grid.set(x, yy, contrast(bg.get(x, yy), MARK_CONTRAST));
                    }
                }
            }
            _ => {}
        }
    }
    grid
}

/// Renders the current screen of `state`.
pub fn render(spec: &SimAppSpec, state: &EnvState) -> PixelGrid {
    let screen = spec
        .screen(state.current_screen)
        .expect("state references a valid screen");
    render_screen(spec, screen, &state.data)
}

/// Reads the screen id back out of a render's status bar.
pub fn decode_screen_id(grid: &PixelGrid) -> Option<u32> {
    if grid.width < STATUS_BITS || grid.height < STATUS_ROWS {
        return None;
    }
    let block = grid.width / STATUS_BITS;
    let mut id = 0u32;
    for bit in 0..STATUS_BITS {
        let v = grid.get(bit * block + block / 2, 1);
        let on = match v {
            255 => true,
            0 => false,
            _ => return None,
        };
        id = (id << 1) | u32::from(on);
    }
    Some(id)
}
