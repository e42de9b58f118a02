//! GUI layout: element geometry and the shared element identifiers.
//!
//! Boxes are half-open: a pixel `(x, y)` belongs to a box iff
//! `x0 <= x < x0 + w` and `y0 <= y < y0 + h`. Adjacent boxes that share a
//! grid line therefore never both claim a pixel.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SCREEN_W: u32 = 1920;
pub const DEFAULT_SCREEN_H: u32 = 1200;
pub const ICON_W: u32 = 142;
pub const ICON_H: u32 = 128;
pub const DRONE_COUNT: usize = 4;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("layout parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("elements `{0}` and `{1}` overlap")]
    Overlap(String, String),
    #[error("element `{0}` lies outside the {1}x{2} screen")]
    OutOfBounds(String, u32, u32),
    #[error("duplicate element id `{0}`")]
    DuplicateId(String),
    #[error("element `{0}` has an empty bounding box")]
    EmptyBox(String),
    #[error("unknown element `{0}`")]
    UnknownElement(String),
}

/// The eight icon kinds shown in every drone block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IconKind {
    Battery,
    Wind,
    Rotor,
    Zone,
    HSpeed,
    Altitude,
    Distance,
    Weather,
}

impl IconKind {
    pub const ALL: [IconKind; 8] = [
        IconKind::Battery,
        IconKind::Wind,
        IconKind::Rotor,
        IconKind::Zone,
        IconKind::HSpeed,
        IconKind::Altitude,
        IconKind::Distance,
        IconKind::Weather,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IconKind::Battery => "battery",
            IconKind::Wind => "wind",
            IconKind::Rotor => "rotor",
            IconKind::Zone => "zone",
            IconKind::HSpeed => "h_speed",
            IconKind::Altitude => "altitude",
            IconKind::Distance => "distance",
            IconKind::Weather => "weather",
        }
    }

    /// Safety icons are the only ones that can carry a critical situation.
    pub fn is_safety(self) -> bool {
        matches!(
            self,
            IconKind::Battery | IconKind::Wind | IconKind::Rotor | IconKind::Zone
        )
    }
}

impl fmt::Display for IconKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    pub fn x1(&self) -> u32 {
        self.x + self.w
    }

    pub fn y1(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64 && px < self.x1() as f64 && py >= self.y as f64 && py < self.y1() as f64
    }

    pub fn contains_pixel(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.x1() && py >= self.y && py < self.y1()
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x < other.x1() && other.x < self.x1() && self.y < other.y1() && other.y < self.y1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: String,
    pub drone_index: usize,
    pub icon_kind: IconKind,
    pub bbox: BBox,
}

/// Validated, immutable screen layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    width_px: u32,
    height_px: u32,
    elements: Vec<Element>,
}

#[derive(Serialize, Deserialize)]
struct ElementRecord {
    id: String,
    drone: usize,
    kind: IconKind,
    bbox: [u32; 4],
}

#[derive(Serialize, Deserialize)]
struct LayoutRecord {
    width_px: u32,
    height_px: u32,
    elements: Vec<ElementRecord>,
}

impl Layout {
    pub fn new(width_px: u32, height_px: u32, elements: Vec<Element>) -> Result<Self, LayoutError> {
        let layout = Layout {
            width_px,
            height_px,
            elements,
        };
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<(), LayoutError> {
        for (i, e) in self.elements.iter().enumerate() {
            if e.bbox.w == 0 || e.bbox.h == 0 {
                return Err(LayoutError::EmptyBox(e.id.clone()));
            }
            if e.bbox.x1() > self.width_px || e.bbox.y1() > self.height_px {
                return Err(LayoutError::OutOfBounds(
                    e.id.clone(),
                    self.width_px,
                    self.height_px,
                ));
            }
            for other in &self.elements[..i] {
                if other.id == e.id {
                    return Err(LayoutError::DuplicateId(e.id.clone()));
                }
                if other.bbox.intersects(&e.bbox) {
                    return Err(LayoutError::Overlap(other.id.clone(), e.id.clone()));
                }
            }
        }
        Ok(())
    }

    /// Four drone blocks in a 2x2 arrangement on the left of the screen, each
    /// block holding the eight icons as two rows of four (safety icons on top).
    /// The map panel on the right is background.
    pub fn default_layout() -> Self {
        let block_w = 4 * ICON_W;
        let block_h = 2 * ICON_H;
        let mut elements = Vec::with_capacity(DRONE_COUNT * 8);
        for drone in 0..DRONE_COUNT {
            let bx = 40 + (drone % 2) as u32 * (block_w + 56);
            let by = 180 + (drone / 2) as u32 * (block_h + 184);
            for (slot, kind) in IconKind::ALL.iter().enumerate() {
                let col = (slot % 4) as u32;
                let row = (slot / 4) as u32;
                elements.push(Element {
                    id: format!("d{drone}_{kind}"),
                    drone_index: drone,
                    icon_kind: *kind,
                    bbox: BBox::new(bx + col * ICON_W, by + row * ICON_H, ICON_W, ICON_H),
                });
            }
        }
        Layout::new(DEFAULT_SCREEN_W, DEFAULT_SCREEN_H, elements).expect("default layout is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        let rec: LayoutRecord = serde_json::from_str(text)?;
        let elements = rec
            .elements
            .into_iter()
            .map(|e| Element {
                id: e.id,
                drone_index: e.drone,
                icon_kind: e.kind,
                bbox: BBox::new(e.bbox[0], e.bbox[1], e.bbox[2], e.bbox[3]),
            })
            .collect();
        Layout::new(rec.width_px, rec.height_px, elements)
    }

    pub fn to_json(&self) -> String {
        let rec = LayoutRecord {
            width_px: self.width_px,
            height_px: self.height_px,
            elements: self
                .elements
                .iter()
                .map(|e| ElementRecord {
                    id: e.id.clone(),
                    drone: e.drone_index,
                    kind: e.icon_kind,
                    bbox: [e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h],
                })
                .collect(),
        };
        serde_json::to_string_pretty(&rec).expect("layout serializes")
    }

    pub fn width_px(&self) -> u32 {
        self.width_px
    }

    pub fn height_px(&self) -> u32 {
        self.height_px
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize, LayoutError> {
        self.elements
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| LayoutError::UnknownElement(id.to_string()))
    }

    pub fn find(&self, drone: usize, kind: IconKind) -> Option<usize> {
        self.elements
            .iter()
            .position(|e| e.drone_index == drone && e.icon_kind == kind)
    }

    /// Index of the element whose box contains `(x, y)`.
    pub fn element_index_at(&self, x: f64, y: f64) -> Option<usize> {
        self.elements.iter().position(|e| e.bbox.contains(x, y))
    }

    pub fn element_at(&self, x: f64, y: f64) -> Option<&str> {
        self.element_index_at(x, y).map(|i| self.elements[i].id.as_str())
    }
}

pub fn load_layout(path: impl AsRef<Path>) -> Result<Layout, LayoutError> {
    let text = std::fs::read_to_string(path)?;
    Layout::from_json(&text)
}

pub fn save_layout(layout: &Layout, path: impl AsRef<Path>) -> Result<(), LayoutError> {
    std::fs::write(path, layout.to_json())?;
    Ok(())
}
