//! Simulated camera plus open-set detector.
//!
//! Detection is ground truth filtered by field of view, range and a center-ray
//! occlusion test; label queries use case-insensitive substring matching.

use serde::{Deserialize, Serialize};
use std::ops::Sub;

use crate::geometry::{heading_of, segment_intersection, wrap_180, Vec2};
use crate::world::{World, WorldObject};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Half-angle of the field of view, degrees.
    pub fov_half_deg: f64,
    pub range: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            fov_half_deg: 60.0,
            range: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: String,
    pub label: String,
    pub distance: f64,
    /// Degrees relative to the robot heading, counter-clockwise positive.
    pub bearing: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraObservation {
    pub tick: u64,
    pub detections: Vec<Detection>,
}

impl CameraObservation {
    /// Detections whose label contains any of `queries`, ignoring case.
    /// An empty query list keeps everything.
    pub fn matching(&self, queries: &[String]) -> Vec<Detection> {
        if queries.is_empty() {
            return self.detections.clone();
        }
        let qs: Vec<String> = queries.iter().map(|q| q.to_lowercase()).collect();
        self.detections
            .iter()
            .filter(|d| {
                let label = d.label.to_lowercase();
                qs.iter().any(|q| label.contains(q.as_str()))
            })
            .cloned()
            .collect()
    }
}

pub fn round_to(v: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (v * k).round() / k
}

impl World {
    /// Whether `target` is seen by the robot camera under the sensor model.
    pub fn is_visible(&self, target: &WorldObject) -> bool {
        let eye = self.robot.pose.position();
        let center = target.pose.position();
        let to = center.sub(eye);
        let d = to.norm();
        if d > self.sensor.range {
            return false;
        }
        if d > 0.0 {
            let bearing = wrap_180(heading_of(to) - self.robot.pose.heading);
            if bearing.abs() > self.sensor.fov_half_deg {
                return false;
            }
        }
        !self.occluded(eye, target)
    }

    fn occluded(&self, eye: Vec2, target: &WorldObject) -> bool {
        let center = target.pose.position();
        if self
            .walls
            .iter()
            .any(|w| segment_intersection(eye, center, w.a(), w.b()).is_some())
        {
            return true;
        }
        let stack = self.stack_of(&target.id);
        self.objects.iter().any(|o| {
            o.id != target.id
                && !o.traversable
                && !stack.contains(&o.id)
                && o.footprint().clip_segment(eye, center).is_some()
        })
    }

    /// Ids of every object in the same support chain as `id` (below and above).
    pub fn stack_of(&self, id: &str) -> Vec<String> {
        let mut out = vec![id.to_string()];
        let mut cur = self.object(id).and_then(|o| o.supported_by.clone());
        while let Some(s) = cur {
            if out.contains(&s) {
                break;
            }
            out.push(s.clone());
            cur = self.object(&s).and_then(|o| o.supported_by.clone());
        }
        let mut grew = true;
        while grew {
            grew = false;
            for o in &self.objects {
                if let Some(s) = &o.supported_by {
                    if out.contains(s) && !out.contains(&o.id) {
                        out.push(o.id.clone());
                        grew = true;
                    }
                }
            }
        }
        out
    }

    pub fn observe(&self) -> CameraObservation {
        let eye = self.robot.pose.position();
        let mut detections: Vec<Detection> = self
            .objects
            .iter()
            .filter(|o| self.is_visible(o))
            .map(|o| {
                let to = o.pose.position().sub(eye);
                let distance = to.norm();
                let bearing = if distance > 0.0 {
                    wrap_180(heading_of(to) - self.robot.pose.heading)
                } else {
                    0.0
                };
                Detection {
                    id: o.id.clone(),
                    label: o.label.clone(),
                    distance,
                    bearing,
                    confidence: round_to(1.0 - distance / self.sensor.range, 2),
                }
            })
            .collect();
        detections.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then_with(|| a.id.cmp(&b.id))
        });
        CameraObservation {
            tick: self.tick,
            detections,
        }
    }

    /// Open-set detector: visible objects matching any query, nearest first.
    pub fn detect(&self, queries: &[String]) -> Vec<Detection> {
        self.observe().matching(queries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(objects: &str, robot: &str) -> World {
        World::from_json(&format!(
            r#"{{"bounds":{{"xmin":-20,"ymin":-20,"xmax":20,"ymax":20}},
                "objects":[{objects}], "robot":{robot}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn fov_gate() {
        let w = world(
            r#"{"id":"c","label":"chair","x":0,"y":3,"hx":0.2,"hy":0.2,"height":1}"#,
            r#"{"x":0,"y":0,"heading":0}"#,
        );
        assert!(w.observe().detections.is_empty());
    }

    #[test]
    fn confidence_formula() {
        let w = world(
            r#"{"id":"c","label":"chair","x":5,"y":0,"hx":0.2,"hy":0.2,"height":1}"#,
            r#"{"x":0,"y":0,"heading":0}"#,
        );
        let obs = w.observe();
        assert_eq!(obs.detections.len(), 1);
        assert_eq!(obs.detections[0].confidence, 0.50);
    }

    #[test]
    fn three_four_five() {
        let w = world(
            r#"{"id":"c","label":"chair","x":3,"y":4,"hx":0.2,"hy":0.2,"height":1}"#,
            r#"{"x":0,"y":0,"heading":0}"#,
        );
        let d = &w.observe().detections[0];
        assert!((d.distance - 5.0).abs() < 1e-12);
        assert!((d.bearing - 53.13010235415598).abs() < 1e-9);
    }

    #[test]
    fn substring_query_sorted_by_distance() {
        let w = world(
            r#"{"id":"r","label":"red_block","x":6,"y":0.5,"hx":0.2,"hy":0.2,"height":1},
               {"id":"b","label":"Blue_Block","x":3,"y":-0.5,"hx":0.2,"hy":0.2,"height":1},
               {"id":"k","label":"carrot","x":2,"y":2,"hx":0.2,"hy":0.2,"height":1}"#,
            r#"{"x":0,"y":0,"heading":0}"#,
        );
        let got: Vec<String> = w
            .detect(&["block".to_string()])
            .into_iter()
            .map(|d| d.id)
            .collect();
        assert_eq!(got, vec!["b", "r"]);
    }

    #[test]
    fn occlusion_by_center_ray() {
        let w = world(
            r#"{"id":"front","label":"crate","x":2,"y":0,"hx":0.3,"hy":0.3,"height":1},
               {"id":"back","label":"chair","x":5,"y":0,"hx":0.3,"hy":0.3,"height":1}"#,
            r#"{"x":0,"y":0,"heading":0}"#,
        );
        let ids: Vec<String> = w.observe().detections.into_iter().map(|d| d.id).collect();
        assert_eq!(ids, vec!["front"]);
    }

    #[test]
    fn range_gate() {
        let w = world(
            r#"{"id":"c","label":"chair","x":10.5,"y":0,"hx":0.2,"hy":0.2,"height":1}"#,
            r#"{"x":0,"y":0,"heading":0}"#,
        );
        assert!(w.observe().detections.is_empty());
    }
}
