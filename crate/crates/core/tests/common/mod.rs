#![allow(dead_code)]

use weedbot_core::geometry::Point2;
use weedbot_core::mission_control::{Mission, WeedEntry};
use weedbot_core::scenario::Scenario;
use weedbot_core::sim_world::Weed;

pub const THREE_WEEDS: [(u32, f64, f64, usize, f64); 3] = [(1, 3.0, 0.5, 4, 0.3), (2, 5.5, 2.0, 5, 1.1), (3, 3.5, 4.0, 3, 2.0)];

/// Loose-soil field with three seedlings; roots come out at 40 N.
pub fn loose_soil(seed: u64) -> Scenario {
    let mut s = Scenario::default();
    s.name = "loose_soil".into();
    s.world.seed = seed;
    s.world.weeds = THREE_WEEDS
        .iter()
        .map(|&(id, x, y, leaves, rot)| Weed::rosette(id, [x, y, 0.0], leaves, 0.09, 0.025, rot, 40.0))
        .collect();
    s
}

/// Roots that need more than the force ceiling.
pub fn hard_ground(seed: u64) -> Scenario {
    let mut s = loose_soil(seed);
    s.name = "hard_ground".into();
    for w in &mut s.world.weeds {
        w.extraction_force = 160.0;
    }
    s
}

pub fn map_for(s: &Scenario) -> Mission {
    let weeds = s.world.weeds.iter().map(|w| WeedEntry { id: w.id, position: Point2::new(w.root_position[0], w.root_position[1]) }).collect();
    Mission::from_weeds(s.name.clone(), weeds)
}
