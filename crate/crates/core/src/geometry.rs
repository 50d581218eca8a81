//! Axis-aligned boxes in pixel coordinates.

/// Center-format box: (cx, cy) center, w×h extent, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2 {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl Box2 {
    pub fn new(cx: f32, cy: f32, w: f32, h: f32) -> Box2 {
        Box2 { cx, cy, w, h }
    }

    /// (x0, y0, x1, y1) corners.
    pub fn corners(&self) -> (f32, f32, f32, f32) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn from_corners(x0: f32, y0: f32, x1: f32, y1: f32) -> Box2 {
        Box2 {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn area(&self) -> f32 {
        self.w * self.h
    }

    /// True if the box lies entirely inside a width×height image.
    pub fn inside(&self, width: f32, height: f32) -> bool {
        let (x0, y0, x1, y1) = self.corners();
        x0 >= 0.0 && y0 >= 0.0 && x1 <= width && y1 <= height
    }
}
