//! Template-generated explanation and recommendation text for synthetic
//! scenarios, built from the oracle's findings.

use crate::model::ConflictLabel;
use crate::sim::geometry::Priority;
use crate::sim::{Leg, Movement, OracleAnalysis, Scenario, SimError, Vehicle, VehicleClass};

fn class_name(c: VehicleClass) -> &'static str {
    match c {
        VehicleClass::Car => "car",
        VehicleClass::Bus => "bus",
        VehicleClass::Van => "van",
        VehicleClass::Truck => "truck",
        VehicleClass::Bike => "bicycle",
        VehicleClass::Motorcycle => "motorcycle",
    }
}

fn leg_name(l: Leg) -> &'static str {
    match l {
        Leg::West => "west",
        Leg::East => "east",
        Leg::North => "north",
        Leg::South => "south",
    }
}

fn movement_name(m: Movement) -> &'static str {
    match m {
        Movement::Left => "turning left",
        Movement::Straight => "going straight",
        Movement::Right => "turning right",
    }
}

fn road(s: &Scenario, v: &Vehicle) -> &'static str {
    match s.geometry.priority(v.route.approach_leg) {
        Priority::Main => "main road",
        Priority::Sub => "side road",
    }
}

fn describe(s: &Scenario, v: &Vehicle) -> String {
    format!(
        "the {} from the {} {} ({})",
        class_name(v.vclass),
        leg_name(v.route.approach_leg),
        road(s, v),
        movement_name(v.route.movement)
    )
}

/// Who gives way between two conflicting vehicles.
fn yielder<'a>(s: &Scenario, a: &'a Vehicle, b: &'a Vehicle) -> Option<(&'a Vehicle, &'a Vehicle)> {
    let pa = s.geometry.priority(a.route.approach_leg);
    let pb = s.geometry.priority(b.route.approach_leg);
    match (pa, pb) {
        (Priority::Sub, Priority::Main) => Some((a, b)),
        (Priority::Main, Priority::Sub) => Some((b, a)),
        // same road class: a left turn gives way to oncoming or crossing traffic
        _ => match (a.route.movement, b.route.movement) {
            (Movement::Left, m) if m != Movement::Left => Some((a, b)),
            (m, Movement::Left) if m != Movement::Left => Some((b, a)),
            _ => None,
        },
    }
}

/// (explanation, recommendation) for a labeled scenario.
pub fn scenario_rationale(s: &Scenario) -> Result<(String, String), SimError> {
    let parked = s.vehicles.iter().filter(|v| v.parked).count();
    let parked_note = match parked {
        0 => String::new(),
        1 => " The parked vehicle does not take part.".into(),
        n => format!(" The {n} parked vehicles do not take part."),
    };
    match (s.oracle_label, s.conflict_pairs.first()) {
        (ConflictLabel::Conflict, Some(pair)) => {
            let a = s.vehicle(&pair.first).ok_or_else(|| SimError::InvalidRoute(pair.first.clone()))?;
            let b = s.vehicle(&pair.second).ok_or_else(|| SimError::InvalidRoute(pair.second.clone()))?;
            let mut explanation = format!(
                "{} and {} are heading into the same part of the intersection about {:.1} s after the first frame, \
                 less than {:.1} s apart.",
                capitalize(&describe(s, a)),
                describe(s, b),
                pair.t_conflict,
                pair.min_gap.max(0.1)
            );
            if s.conflict_pairs.len() > 1 {
                explanation.push_str(&format!(" {} more vehicle pairs are also at risk.", s.conflict_pairs.len() - 1));
            }
            explanation.push_str(&parked_note);
            let recommendation = match yielder(s, a, b) {
                Some((y, p)) => format!(
                    "The {} should slow down and give way until the {} has cleared the intersection.",
                    class_name(y.vclass),
                    class_name(p.vclass)
                ),
                None => format!(
                    "Both the {} and the {} should slow down; one must stop and let the other clear the intersection.",
                    class_name(a.vclass),
                    class_name(b.vclass)
                ),
            };
            Ok((explanation, recommendation))
        }
        _ => {
            let analysis = OracleAnalysis::new(&s.geometry, &s.vehicles, &Default::default())?;
            let movers = analysis.movers.len();
            let waiting: Vec<&Vehicle> = analysis
                .movers
                .iter()
                .filter(|m| m.yielding)
                .filter_map(|m| s.vehicle(&m.id))
                .collect();
            let mut explanation = match movers {
                0 => "No vehicle is moving toward the intersection.".to_string(),
                1 => "Only one vehicle is moving through the intersection, so nothing crosses its path.".to_string(),
                n => format!("The {n} moving vehicles either use separate parts of the intersection or pass through shared space well apart in time."),
            };
            if let Some(w) = waiting.first() {
                explanation.push_str(&format!(" {} is stopped and waiting.", capitalize(&describe(s, w))));
            }
            explanation.push_str(&parked_note);
            let recommendation = if waiting.is_empty() {
                "All vehicles can continue at their current speed.".to_string()
            } else {
                format!(
                    "Traffic on the main road can continue; the waiting {} should stay stopped until there is a clear gap.",
                    class_name(waiting[0].vclass)
                )
            };
            Ok((explanation, recommendation))
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
