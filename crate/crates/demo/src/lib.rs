//! WebAssembly bindings over the simulated world for the static demo page.
//! Every value crossing the boundary is a number, a string or a JSON string.

use rai_simworld::{plan_detour, Aabb, NavGoal, Vec2, World};
use serde_json::json;
use wasm_bindgen::prelude::*;

const HOUSE: &str = include_str!("../../../scenarios/worlds/house.json");
const TABLE: &str = include_str!("../../../scenarios/worlds/table.json");
const ORCHARD: &str = include_str!("../../../scenarios/worlds/orchard.json");

/// JSON text of a bundled world: `house`, `table` or `orchard`.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "house" => Some(HOUSE),
        "table" => Some(TABLE),
        "orchard" => Some(ORCHARD),
        _ => None,
    }
}

#[wasm_bindgen]
pub struct Sim {
    world: World,
}

#[wasm_bindgen]
impl Sim {
    /// Loads a bundled world by name.
    #[wasm_bindgen(constructor)]
    pub fn new(name: &str) -> Result<Sim, String> {
        let text = preset(name).ok_or_else(|| format!("unknown world {name:?}"))?;
        Sim::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Sim, String> {
        Ok(Sim {
            world: World::from_json(text).map_err(|e| e.to_string())?,
        })
    }

    /// Compact state for drawing.
    pub fn snapshot(&self) -> String {
        self.world.snapshot().to_string()
    }

    pub fn state_hash(&self) -> String {
        self.world.state_hash()
    }

    pub fn tick(&self) -> f64 {
        self.world.tick as f64
    }

    pub fn navigate_to(&mut self, x: f64, y: f64) -> Result<(), String> {
        self.world
            .set_nav_goal(NavGoal::new(x, y))
            .map_err(|e| e.to_string())
    }

    /// Advances `n` ticks and returns the navigation status, or "idle".
    pub fn step(&mut self, n: u32) -> String {
        for _ in 0..n {
            self.world.step();
        }
        match &self.world.nav {
            Some(nav) => json!(nav.status).as_str().unwrap_or("idle").to_string(),
            None => "idle".into(),
        }
    }

    /// Returns the placed/picked object as JSON, or the error text
    /// starting with its code (for example `OVERLAP: ...`).
    pub fn pick(&mut self, id: &str) -> Result<String, String> {
        self.world
            .pick(id)
            .map(|ok| json!(ok).to_string())
            .map_err(|e| e.to_string())
    }

    pub fn place_at(&mut self, x: f64, y: f64) -> Result<String, String> {
        self.world
            .place_at(x, y)
            .map(|ok| json!(ok).to_string())
            .map_err(|e| e.to_string())
    }

    pub fn place_on(&mut self, id: &str) -> Result<String, String> {
        self.world
            .place_on(id)
            .map(|ok| json!(ok).to_string())
            .map_err(|e| e.to_string())
    }

    /// Id of the object under (x, y), topmost first.
    pub fn object_at(&self, x: f64, y: f64) -> Option<String> {
        let p = Vec2::new(x, y);
        self.world
            .objects
            .iter()
            .filter(|o| o.footprint().contains(p))
            .max_by(|a, b| a.z.total_cmp(&b.z))
            .map(|o| o.id.clone())
    }
}

/// Detour from `from` to `to` around a box centred at (cx, cy) with half
/// extents (hx, hy), kept `clearance` away. JSON object with `waypoints`
/// and the measured minimum `clearance`, or `null` when no detour exists.
#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn detour(
    fx: f64,
    fy: f64,
    tx: f64,
    ty: f64,
    cx: f64,
    cy: f64,
    hx: f64,
    hy: f64,
    clearance: f64,
) -> String {
    let from = Vec2::new(fx, fy);
    let to = Vec2::new(tx, ty);
    let obstacle = Aabb::from_center(Vec2::new(cx, cy), hx, hy);
    match plan_detour(from, to, &obstacle, clearance) {
        None => "null".into(),
        Some(mid) => {
            let mut pts = vec![from];
            pts.extend(mid);
            pts.push(to);
            let min = pts
                .windows(2)
                .map(|s| rai_simworld::geometry::segment_box_distance(s[0], s[1], &obstacle))
                .fold(f64::INFINITY, f64::min);
            json!({
                "waypoints": pts.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
                "clearance": min,
            })
            .to_string()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn presets_load() {
        for name in ["house", "table", "orchard"] {
            let s = Sim::new(name).unwrap();
            let v: Value = serde_json::from_str(&s.snapshot()).unwrap();
            assert!(v["objects"].as_array().unwrap().len() > 1, "{name}");
        }
        assert!(Sim::new("moon").is_err());
    }

    #[test]
    fn navigates_to_a_click() {
        let mut s = Sim::new("house").unwrap();
        s.navigate_to(2.0, 0.0).unwrap();
        let mut status = String::new();
        for _ in 0..100 {
            status = s.step(1);
            if status != "active" {
                break;
            }
        }
        assert_eq!(status, "reached");
        assert!(s.navigate_to(100.0, 0.0).is_err());
    }

    #[test]
    fn blocks_report_overlap() {
        let mut s = Sim::new("table").unwrap();
        assert_eq!(s.object_at(4.0, 1.0).as_deref(), Some("red_cube_1"));
        s.pick("red_cube_1").unwrap();
        let err = s.place_at(4.0, 3.0).unwrap_err();
        assert!(err.starts_with("OVERLAP"), "{err}");
        s.place_on("blue_cube_1").unwrap();
        assert_eq!(s.object_at(4.0, 3.0).as_deref(), Some("red_cube_1"));
    }

    #[test]
    fn detour_keeps_clearance() {
        let v: Value =
            serde_json::from_str(&detour(0.0, 0.0, 10.0, 0.0, 5.0, 0.0, 0.5, 0.5, 0.5)).unwrap();
        assert!(v["clearance"].as_f64().unwrap() >= 0.5 - 1e-9);
        assert!(v["waypoints"].as_array().unwrap().len() > 2);
        assert_eq!(detour(5.0, 0.0, 10.0, 0.0, 5.0, 0.0, 0.5, 0.5, 0.5), "null");
    }
}
