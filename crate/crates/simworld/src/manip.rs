//! Discrete pick/place manipulation with physical constraints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::world::{Pose2D, World, WorldObject};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManipCommand {
    Pick { pick: String },
    PlaceAt { place_at: PlacePoint },
    PlaceOn { place_on: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacePoint {
    pub x: f64,
    pub y: f64,
}

impl ManipCommand {
    pub fn pick(id: impl Into<String>) -> Self {
        ManipCommand::Pick { pick: id.into() }
    }

    pub fn place_at(x: f64, y: f64) -> Self {
        ManipCommand::PlaceAt {
            place_at: PlacePoint { x, y },
        }
    }

    pub fn place_on(id: impl Into<String>) -> Self {
        ManipCommand::PlaceOn {
            place_on: id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ManipError {
    #[error("ALREADY_HOLDING: gripper already holds {held}")]
    AlreadyHolding { held: String },
    #[error("NOT_FOUND: no object {id}")]
    NotFound { id: String },
    #[error("TOP_OCCUPIED: {id} has {on_top} on top")]
    TopOccupied { id: String, on_top: String },
    #[error("OVERLAP: {moving} would intersect {with}")]
    Overlap { moving: String, with: String },
    #[error("NOTHING_HELD: gripper is empty")]
    NothingHeld,
    #[error("OUT_OF_BOUNDS: ({x}, {y}) is off the workspace")]
    OutOfBounds { x: f64, y: f64 },
}

impl ManipError {
    pub fn code(&self) -> &'static str {
        match self {
            ManipError::AlreadyHolding { .. } => "ALREADY_HOLDING",
            ManipError::NotFound { .. } => "NOT_FOUND",
            ManipError::TopOccupied { .. } => "TOP_OCCUPIED",
            ManipError::Overlap { .. } => "OVERLAP",
            ManipError::NothingHeld => "NOTHING_HELD",
            ManipError::OutOfBounds { .. } => "OUT_OF_BOUNDS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipOk {
    pub object: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub supported_by: Option<String>,
}

impl World {
    pub fn manipulate(&mut self, cmd: &ManipCommand) -> Result<ManipOk, ManipError> {
        match cmd {
            ManipCommand::Pick { pick } => self.pick(pick),
            ManipCommand::PlaceAt { place_at } => self.place_at(place_at.x, place_at.y),
            ManipCommand::PlaceOn { place_on } => self.place_on(place_on),
        }
    }

    pub fn pick(&mut self, id: &str) -> Result<ManipOk, ManipError> {
        if let Some(h) = &self.held {
            return Err(ManipError::AlreadyHolding { held: h.id.clone() });
        }
        let idx = self
            .objects
            .iter()
            .position(|o| o.id == id)
            .ok_or_else(|| ManipError::NotFound { id: id.to_string() })?;
        if let Some(top) = self.resting_on(id) {
            return Err(ManipError::TopOccupied {
                id: id.to_string(),
                on_top: top.id.clone(),
            });
        }
        let obj = self.objects.remove(idx);
        let ok = ManipOk {
            object: obj.id.clone(),
            x: obj.pose.x,
            y: obj.pose.y,
            z: obj.z,
            supported_by: obj.supported_by.clone(),
        };
        self.held = Some(obj);
        Ok(ok)
    }

    pub fn place_at(&mut self, x: f64, y: f64) -> Result<ManipOk, ManipError> {
        let held = self.held.as_ref().ok_or(ManipError::NothingHeld)?;
        let mut candidate = held.clone();
        candidate.pose = Pose2D::new(x, y, candidate.pose.heading);
        candidate.z = 0.0;
        candidate.supported_by = None;
        let fp = candidate.footprint();
        if !self.bounds.contains(fp.min) || !self.bounds.contains(fp.max) {
            return Err(ManipError::OutOfBounds { x, y });
        }
        self.commit_place(candidate)
    }

    pub fn place_on(&mut self, target: &str) -> Result<ManipOk, ManipError> {
        let held = self.held.as_ref().ok_or(ManipError::NothingHeld)?;
        let base = self
            .object(target)
            .ok_or_else(|| ManipError::NotFound {
                id: target.to_string(),
            })?
            .clone();
        if let Some(top) = self.resting_on(target) {
            return Err(ManipError::TopOccupied {
                id: target.to_string(),
                on_top: top.id.clone(),
            });
        }
        let mut candidate = held.clone();
        candidate.pose = Pose2D::new(base.pose.x, base.pose.y, candidate.pose.heading);
        candidate.z = base.top();
        candidate.supported_by = Some(base.id.clone());
        self.commit_place(candidate)
    }

    fn commit_place(&mut self, candidate: WorldObject) -> Result<ManipOk, ManipError> {
        if let Some(other) = self.objects.iter().find(|o| o.collides_with(&candidate)) {
            return Err(ManipError::Overlap {
                moving: candidate.id.clone(),
                with: other.id.clone(),
            });
        }
        let ok = ManipOk {
            object: candidate.id.clone(),
            x: candidate.pose.x,
            y: candidate.pose.y,
            z: candidate.z,
            supported_by: candidate.supported_by.clone(),
        };
        self.objects.push(candidate);
        self.held = None;
        Ok(ok)
    }

    /// Object resting directly on `id`, if any.
    pub fn resting_on(&self, id: &str) -> Option<&WorldObject> {
        self.objects
            .iter()
            .find(|o| o.supported_by.as_deref() == Some(id))
    }

    /// Whether a ground-level footprint of the held object would fit at `p`.
    pub fn free_at(&self, p: Vec2) -> bool {
        let Some(held) = &self.held else {
            return false;
        };
        let mut c = held.clone();
        c.pose = Pose2D::new(p.x, p.y, 0.0);
        c.z = 0.0;
        !self.objects.iter().any(|o| o.collides_with(&c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkers::check_swapped;

    fn table() -> World {
        World::from_json(
            r#"{"bounds":{"xmin":0,"ymin":0,"xmax":6,"ymax":6},
                "objects":[
                  {"id":"A","label":"red_cube","x":1,"y":1,"hx":0.25,"hy":0.25,"height":0.5},
                  {"id":"B","label":"blue_cube","x":3,"y":1,"hx":0.25,"hy":0.25,"height":0.5},
                  {"id":"C","label":"green_cube","x":5,"y":1,"hx":0.25,"hy":0.25,"height":0.5}],
                "robot":{"x":3,"y":5}}"#,
        )
        .unwrap()
    }

    #[test]
    fn stacking_rule() {
        let mut w = table();
        w.pick("A").unwrap();
        let ok = w.place_on("B").unwrap();
        assert_eq!(ok.z, 0.5);
        let a = w.object("A").unwrap();
        assert_eq!(a.z, w.object("B").unwrap().top());
        assert_eq!(a.supported_by.as_deref(), Some("B"));
        assert!(w.support_consistent());
    }

    #[test]
    fn place_inside_is_overlap() {
        let mut w = table();
        w.pick("A").unwrap();
        let err = w.place_at(5.1, 1.0).unwrap_err();
        assert_eq!(err.code(), "OVERLAP");
        // the gripper keeps the object after a refused placement
        assert_eq!(w.held.as_ref().unwrap().id, "A");
    }

    #[test]
    fn error_codes() {
        let mut w = table();
        assert_eq!(w.place_at(2.0, 3.0).unwrap_err(), ManipError::NothingHeld);
        assert_eq!(w.pick("Z").unwrap_err().code(), "NOT_FOUND");
        w.pick("A").unwrap();
        assert_eq!(w.pick("B").unwrap_err().code(), "ALREADY_HOLDING");
        w.place_on("B").unwrap();
        // B now carries A
        assert_eq!(w.pick("B").unwrap_err().code(), "TOP_OCCUPIED");
        w.pick("C").unwrap();
        assert_eq!(w.place_on("B").unwrap_err().code(), "TOP_OCCUPIED");
        assert_eq!(w.place_at(10.0, 1.0).unwrap_err().code(), "OUT_OF_BOUNDS");
    }

    /// Overlap oracle written independently of `collides_with`.
    fn any_overlap(w: &World) -> bool {
        let o = &w.objects;
        for i in 0..o.len() {
            for j in i + 1..o.len() {
                let (a, b) = (&o[i], &o[j]);
                let xo = (a.pose.x - b.pose.x).abs() < a.hx + b.hx;
                let yo = (a.pose.y - b.pose.y).abs() < a.hy + b.hy;
                let zo = a.z < b.z + b.height && b.z < a.z + a.height;
                if xo && yo && zo {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn swap_needs_intermediate_slot() {
        let initial = table();
        let (a0, b0) = (
            initial.object("A").unwrap().pose.position(),
            initial.object("B").unwrap().pose.position(),
        );
        // two-move plan: put A straight onto B's spot
        let mut naive = initial.clone();
        naive.pick("A").unwrap();
        let err = naive.place_at(b0.x, b0.y).unwrap_err();
        assert_eq!(err.code(), "OVERLAP");
        assert!(!any_overlap(&naive));

        // three-move plan through a free cell
        let mut w = initial.clone();
        let slot = Vec2::new(3.0, 4.0);
        let plan = [
            ManipCommand::pick("A"),
            ManipCommand::place_at(slot.x, slot.y),
            ManipCommand::pick("B"),
            ManipCommand::place_at(a0.x, a0.y),
            ManipCommand::pick("A"),
            ManipCommand::place_at(b0.x, b0.y),
        ];
        for cmd in &plan {
            w.manipulate(cmd).unwrap();
            assert!(!any_overlap(&w));
        }
        assert!(check_swapped(&w, ("A", "B"), &initial).pass);
    }

    #[test]
    fn command_json_shapes() {
        let c: ManipCommand = serde_json::from_str(r#"{"pick":"A"}"#).unwrap();
        assert_eq!(c, ManipCommand::pick("A"));
        let c: ManipCommand = serde_json::from_str(r#"{"place_at":{"x":1,"y":2}}"#).unwrap();
        assert_eq!(c, ManipCommand::place_at(1.0, 2.0));
        let c: ManipCommand = serde_json::from_str(r#"{"place_on":"B"}"#).unwrap();
        assert_eq!(c, ManipCommand::place_on("B"));
    }
}
