//! Scripted person-following runs and their expected tick traces, worked
//! out by hand from the tree shape and the skill rules:
//!
//! * the tree is ticked once before the first runtime tick, then after each
//! * people move before skills step within a tick
//! * `track_head` finishes on its first step, `detect_target` gives up on
//!   its third miss, `navigate_to_target` only ends by failing

use hearth_core::bt::{person_following_tree, run_following, FollowTick};
use hearth_core::kb::EntityKind;
use hearth_core::sim::{register_sim_skills, Cell, Scenario, World};
use hearth_core::skill::Runtime;

pub struct FollowCase {
    pub name: &'static str,
    pub scenario: &'static str,
    pub ticks: usize,
    pub expected: Vec<String>,
    pub final_robot: Cell,
}

// post-order visit strings
const SEEN_UNTRACKED: &str =
    "target_visible=S acquire=S target_tracked=F track_head=R track=R pursue=R follow=R";
const SEEN_TRACKED: &str =
    "target_visible=S acquire=S target_tracked=S track=S navigate_to_target=R pursue=R follow=R";
const SEARCHING: &str = "target_visible=F detect_target=R acquire=R follow=R";

fn row(tick: usize, visits: &str, extra: &str) -> String {
    if extra.is_empty() {
        format!("{tick}\t{visits}")
    } else {
        format!("{tick}\t{visits}\t{extra}")
    }
}

/// Bob walks east along an open corridor; the robot trails him and stops
/// two cells behind once he halts at x=15.
fn straight_line() -> FollowCase {
    let mut expected = vec![
        row(0, SEEN_UNTRACKED, "dispatch=track_head"),
        row(1, SEEN_TRACKED, "dispatch=navigate_to_target"),
    ];
    expected.extend((2..15).map(|t| row(t, SEEN_TRACKED, "")));
    FollowCase {
        name: "straight_line",
        scenario: r#"{
            "name": "corridor", "seed": 1, "width": 20, "height": 7,
            "people": [{"name": "bob", "cell": [5, 3], "waypoints": [[15, 3]]}],
            "robot": {"cell": [2, 3]},
            "sim": {"visibility_radius": 12, "follow_distance": 2, "redetect_budget": 3}
        }"#,
        ticks: 15,
        expected,
        final_robot: Cell::new(13, 3),
    }
}

/// Bob starts beyond the short sensing radius and walks into view on the
/// third tick, before the detector runs out of misses.
fn late_acquisition() -> FollowCase {
    let expected = vec![
        row(0, SEARCHING, "dispatch=detect_target"),
        row(1, SEARCHING, ""),
        row(2, SEARCHING, ""),
        row(3, SEEN_UNTRACKED, "dispatch=track_head"),
        row(4, SEEN_TRACKED, "dispatch=navigate_to_target"),
        row(5, SEEN_TRACKED, ""),
        row(6, SEEN_TRACKED, ""),
        row(7, SEEN_TRACKED, ""),
    ];
    FollowCase {
        name: "late_acquisition",
        scenario: r#"{
            "name": "hall", "seed": 2, "width": 20, "height": 7,
            "people": [{"name": "bob", "cell": [9, 3], "waypoints": [[5, 3]]}],
            "robot": {"cell": [2, 3]},
            "sim": {"visibility_radius": 4, "follow_distance": 2, "redetect_budget": 3}
        }"#,
        ticks: 8,
        expected,
        final_robot: Cell::new(3, 3),
    }
}

/// Bob leaves the map on tick 3; navigation fails, the detector misses
/// three times and the whole tree fails.
fn target_lost() -> FollowCase {
    let expected = vec![
        row(0, SEEN_UNTRACKED, "dispatch=track_head"),
        row(1, SEEN_TRACKED, "dispatch=navigate_to_target"),
        row(2, SEEN_TRACKED, ""),
        row(3, SEARCHING, "dispatch=detect_target"),
        row(4, SEARCHING, ""),
        row(5, SEARCHING, ""),
        row(6, "target_visible=F detect_target=F acquire=F follow=F", ""),
    ];
    FollowCase {
        name: "target_lost",
        scenario: r#"{
            "name": "door", "seed": 3, "width": 20, "height": 7,
            "people": [{"name": "bob", "cell": [4, 3], "waypoints": [[6, 3]], "exit_at_end": true}],
            "robot": {"cell": [2, 3]},
            "sim": {"visibility_radius": 12, "follow_distance": 2, "redetect_budget": 3}
        }"#,
        ticks: 20,
        expected,
        final_robot: Cell::new(3, 3),
    }
}

pub fn cases() -> Vec<FollowCase> {
    vec![straight_line(), late_acquisition(), target_lost()]
}

pub struct FollowRun {
    pub ticks: Vec<FollowTick>,
    pub world: World,
}

impl FollowRun {
    pub fn lines(&self) -> Vec<String> {
        self.ticks.iter().map(|t| t.log.to_string()).collect()
    }
}

pub fn run(case: &FollowCase) -> FollowRun {
    let (world, kb) = Scenario::from_json(case.scenario).unwrap().build().unwrap();
    let bob = kb.lookup(EntityKind::Instance, "bob").unwrap();
    let mut rt = Runtime::new(world, kb);
    register_sim_skills(&mut rt).unwrap();
    let mut tree = person_following_tree(bob);
    tree.validate(&rt).unwrap();
    let ticks = run_following(&mut rt, &mut tree, bob, case.ticks);
    FollowRun {
        ticks,
        world: rt.env().clone(),
    }
}
