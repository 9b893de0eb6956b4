//! Problem instances: target agents with goals, goal-less obstructing agents,
//! random generation for the four benchmark environments, and JSON I/O.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridGraph, Vertex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetAgent {
    pub start: Vertex,
    pub goal: Vertex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObstructingAgent {
    pub start: Vertex,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("instance needs at least one target agent")]
    NoTargets,
    #[error("{role} vertex {vertex} is out of bounds")]
    OutOfBounds { role: &'static str, vertex: Vertex },
    #[error("{role} vertex {vertex} is a static obstacle")]
    OnObstacle { role: &'static str, vertex: Vertex },
    #[error("overlapping starts at {0}")]
    OverlappingStarts(Vertex),
    #[error("duplicate target goal {0}")]
    DuplicateGoal(Vertex),
    #[error("too many agents: {agents} agents need fewer than {free} free cells")]
    TooDense { agents: usize, free: usize },
    #[error("infeasible density {density}: {requested} obstructing agents do not fit")]
    InfeasibleDensity { density: f64, requested: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A validated MAPF-HD instance. Agent ids are `0..m` for targets followed by
/// `m..m+n` for obstructing agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    grid: GridGraph,
    targets: Vec<TargetAgent>,
    obstructors: Vec<ObstructingAgent>,
}

impl Instance {
    pub fn new(
        grid: GridGraph,
        targets: Vec<TargetAgent>,
        obstructors: Vec<ObstructingAgent>,
    ) -> Result<Self, InstanceError> {
        if targets.is_empty() {
            return Err(InstanceError::NoTargets);
        }
        let check = |role: &'static str, vertex: Vertex| {
            if !grid.in_bounds(vertex) {
                Err(InstanceError::OutOfBounds { role, vertex })
            } else if !grid.is_free(vertex) {
                Err(InstanceError::OnObstacle { role, vertex })
            } else {
                Ok(())
            }
        };
        let mut starts = HashSet::new();
        let mut goals = HashSet::new();
        for t in &targets {
            check("target start", t.start)?;
            check("target goal", t.goal)?;
            if !starts.insert(t.start) {
                return Err(InstanceError::OverlappingStarts(t.start));
            }
            if !goals.insert(t.goal) {
                return Err(InstanceError::DuplicateGoal(t.goal));
            }
        }
        for o in &obstructors {
            check("obstructor start", o.start)?;
            if !starts.insert(o.start) {
                return Err(InstanceError::OverlappingStarts(o.start));
            }
        }
        let agents = targets.len() + obstructors.len();
        if agents >= grid.num_free() {
            return Err(InstanceError::TooDense {
                agents,
                free: grid.num_free(),
            });
        }
        Ok(Instance {
            grid,
            targets,
            obstructors,
        })
    }

    pub fn grid(&self) -> &GridGraph {
        &self.grid
    }

    pub fn targets(&self) -> &[TargetAgent] {
        &self.targets
    }

    pub fn obstructors(&self) -> &[ObstructingAgent] {
        &self.obstructors
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn num_agents(&self) -> usize {
        self.targets.len() + self.obstructors.len()
    }

    /// Start vertex of every agent, in agent-id order.
    pub fn starts(&self) -> Vec<Vertex> {
        self.targets
            .iter()
            .map(|t| t.start)
            .chain(self.obstructors.iter().map(|o| o.start))
            .collect()
    }
}

/// Where target goals may be placed when generating instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GoalPolicy {
    #[default]
    Anywhere,
    /// Goals on boundary cells only (picking stations along the walls).
    Perimeter,
}

impl FromStr for GoalPolicy {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anywhere" => Ok(GoalPolicy::Anywhere),
            "perimeter" => Ok(GoalPolicy::Perimeter),
            other => Err(InstanceError::InvalidArgument(format!(
                "unknown goal policy '{other}'"
            ))),
        }
    }
}

impl fmt::Display for GoalPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoalPolicy::Anywhere => "anywhere",
            GoalPolicy::Perimeter => "perimeter",
        })
    }
}

/// Number of obstructing agents for a density measured against all cells,
/// static obstacles included.
pub fn obstructor_count(grid: &GridGraph, density: f64) -> usize {
    // the epsilon keeps e.g. 0.29 * 100 from flooring to 28
    let occupied = (density * grid.num_cells() as f64 + 1e-9).floor() as usize;
    occupied.saturating_sub(grid.obstacles().len())
}

/// Seeded random instance. Target starts are drawn first, then goals, then
/// obstructor starts, all without replacement, so goals start out empty.
pub fn generate_random(
    grid: &GridGraph,
    n_targets: usize,
    density: f64,
    seed: u64,
    goal_policy: GoalPolicy,
) -> Result<Instance, InstanceError> {
    if !(0.0..1.0).contains(&density) {
        return Err(InstanceError::InvalidArgument(format!(
            "density {density} outside [0, 1)"
        )));
    }
    if n_targets == 0 {
        return Err(InstanceError::NoTargets);
    }
    let n_obs = obstructor_count(grid, density);
    let free = grid.num_free();
    if n_obs + n_targets >= free || n_obs + 2 * n_targets > free {
        return Err(InstanceError::InfeasibleDensity {
            density,
            requested: n_obs,
        });
    }
    if goal_policy == GoalPolicy::Perimeter {
        let perimeter = grid.free_vertices().filter(|&v| grid.is_perimeter(v)).count();
        if perimeter < n_targets {
            return Err(InstanceError::InvalidArgument(format!(
                "{perimeter} free perimeter cells cannot hold {n_targets} goals"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<Vertex> = grid.free_vertices().collect();
    cells.shuffle(&mut rng);

    let starts: Vec<Vertex> = cells[..n_targets].to_vec();
    let mut rest: Vec<Vertex> = cells[n_targets..].to_vec();

    let goal_pos: Vec<usize> = rest
        .iter()
        .enumerate()
        .filter(|(_, &v)| goal_policy == GoalPolicy::Anywhere || grid.is_perimeter(v))
        .map(|(i, _)| i)
        .take(n_targets)
        .collect();
    if goal_pos.len() < n_targets {
        return Err(InstanceError::InvalidArgument(format!(
            "not enough {goal_policy} cells left for {n_targets} goals"
        )));
    }
    let goals: Vec<Vertex> = goal_pos.iter().map(|&i| rest[i]).collect();
    for &i in goal_pos.iter().rev() {
        rest.remove(i);
    }

    let targets = starts
        .into_iter()
        .zip(goals)
        .map(|(start, goal)| TargetAgent { start, goal })
        .collect();
    let obstructors = rest[..n_obs]
        .iter()
        .map(|&start| ObstructingAgent { start })
        .collect();
    Instance::new(grid.clone(), targets, obstructors)
}

/// The four benchmark environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentEnv {
    /// 14x7, no obstacles.
    Exp1,
    /// 14x7 with a pillar lattice.
    Exp2,
    /// 35x21, no obstacles, goals along the walls.
    Exp3,
    /// 35x21 with 90 pillar cells, goals along the walls.
    Exp4,
}

impl ExperimentEnv {
    pub const ALL: [ExperimentEnv; 4] = [Self::Exp1, Self::Exp2, Self::Exp3, Self::Exp4];

    pub fn default_targets(self) -> usize {
        match self {
            Self::Exp1 | Self::Exp2 => 2,
            Self::Exp3 | Self::Exp4 => 12,
        }
    }

    pub fn default_goal_policy(self) -> GoalPolicy {
        match self {
            Self::Exp1 | Self::Exp2 => GoalPolicy::Anywhere,
            Self::Exp3 | Self::Exp4 => GoalPolicy::Perimeter,
        }
    }
}

impl FromStr for ExperimentEnv {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp1" => Ok(Self::Exp1),
            "exp2" => Ok(Self::Exp2),
            "exp3" => Ok(Self::Exp3),
            "exp4" => Ok(Self::Exp4),
            other => Err(InstanceError::InvalidArgument(format!(
                "unknown environment '{other}'"
            ))),
        }
    }
}

impl fmt::Display for ExperimentEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exp1 => "exp1",
            Self::Exp2 => "exp2",
            Self::Exp3 => "exp3",
            Self::Exp4 => "exp4",
        })
    }
}

fn pillar_lattice(xs: impl Iterator<Item = u32> + Clone, ys: impl Iterator<Item = u32> + Clone) -> Vec<Vertex> {
    xs.flat_map(|x| ys.clone().map(move |y| Vertex::new(x, y)))
        .collect()
}

pub fn make_experiment_env(env: ExperimentEnv) -> GridGraph {
    let grid = match env {
        ExperimentEnv::Exp1 => GridGraph::open(14, 7),
        // 4 x 2 isolated pillars
        ExperimentEnv::Exp2 => GridGraph::new(
            14,
            7,
            pillar_lattice((2..=11).step_by(3), (2..=4).step_by(2)),
        ),
        ExperimentEnv::Exp3 => GridGraph::open(35, 21),
        // 10 x 9 isolated pillars = 90 cells
        ExperimentEnv::Exp4 => GridGraph::new(
            35,
            21,
            pillar_lattice((3..=30).step_by(3), (2..=18).step_by(2)),
        ),
    };
    grid.expect("built-in environments are valid")
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    size_x: u32,
    size_y: u32,
    obstacles: Vec<Vertex>,
    targets: Vec<TargetAgent>,
    obstructing: Vec<Vertex>,
}

pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let doc: InstanceDoc = serde_json::from_str(text).map_err(|e| InstanceError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let grid = GridGraph::new(doc.size_x, doc.size_y, doc.obstacles)?;
    Instance::new(
        grid,
        doc.targets,
        doc.obstructing
            .into_iter()
            .map(|start| ObstructingAgent { start })
            .collect(),
    )
}

pub fn serialize_instance(inst: &Instance) -> String {
    let doc = InstanceDoc {
        size_x: inst.grid.size_x(),
        size_y: inst.grid.size_y(),
        obstacles: inst.grid.obstacles().to_vec(),
        targets: inst.targets.clone(),
        obstructing: inst.obstructors.iter().map(|o| o.start).collect(),
    };
    let mut s = serde_json::to_string(&doc).expect("instance serializes");
    s.push('\n');
    s
}

impl Instance {
    /// Test and fixture helper: obstacle-free grid with the given agents.
    pub fn on_open_grid(
        size_x: u32,
        size_y: u32,
        targets: &[((u32, u32), (u32, u32))],
        obstructors: &[(u32, u32)],
    ) -> Result<Self, InstanceError> {
        Instance::new(
            GridGraph::open(size_x, size_y)?,
            targets
                .iter()
                .map(|&(s, g)| TargetAgent {
                    start: s.into(),
                    goal: g.into(),
                })
                .collect(),
            obstructors
                .iter()
                .map(|&s| ObstructingAgent { start: s.into() })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exp1_density_ninety_gives_88_obstructors() {
        let g = make_experiment_env(ExperimentEnv::Exp1);
        let inst = generate_random(&g, 2, 0.90, 1, GoalPolicy::Anywhere).unwrap();
        assert_eq!(inst.obstructors().len(), 88);
        assert_eq!(inst.num_targets(), 2);
    }

    #[test]
    fn zero_density_has_no_obstructors() {
        for env in ExperimentEnv::ALL {
            let g = make_experiment_env(env);
            let inst =
                generate_random(&g, env.default_targets(), 0.0, 3, env.default_goal_policy())
                    .unwrap();
            assert!(inst.obstructors().is_empty());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let g = make_experiment_env(ExperimentEnv::Exp3);
        let a = generate_random(&g, 12, 0.6, 99, GoalPolicy::Perimeter).unwrap();
        let b = generate_random(&g, 12, 0.6, 99, GoalPolicy::Perimeter).unwrap();
        assert_eq!(a, b);
        let c = generate_random(&g, 12, 0.6, 100, GoalPolicy::Perimeter).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn obstacles_count_toward_density() {
        let g = make_experiment_env(ExperimentEnv::Exp4);
        assert_eq!(obstructor_count(&g, 0.95), 698 - 90);
        assert_eq!(obstructor_count(&g, 0.10), 0);
        let g2 = make_experiment_env(ExperimentEnv::Exp2);
        assert_eq!(obstructor_count(&g2, 0.9), 88 - 8);
    }

    #[test]
    fn perimeter_policy_puts_goals_on_walls() {
        let g = make_experiment_env(ExperimentEnv::Exp4);
        for seed in 0..20 {
            let inst = generate_random(&g, 12, 0.95, seed, GoalPolicy::Perimeter).unwrap();
            assert!(inst.targets().iter().all(|t| g.is_perimeter(t.goal)));
        }
    }

    #[test]
    fn generation_errors() {
        let g = GridGraph::open(4, 1).unwrap();
        assert!(matches!(
            generate_random(&g, 1, 0.75, 0, GoalPolicy::Anywhere),
            Err(InstanceError::InfeasibleDensity { .. })
        ));
        let g = GridGraph::new(3, 3, [Vertex::new(0, 0), Vertex::new(1, 0), Vertex::new(2, 0),
            Vertex::new(0, 1), Vertex::new(2, 1), Vertex::new(0, 2), Vertex::new(2, 2)]).unwrap();
        // only (1,1) and (1,2) are free; (1,2) is the single perimeter cell
        assert!(matches!(
            generate_random(&g, 2, 0.0, 0, GoalPolicy::Perimeter),
            Err(InstanceError::InvalidArgument(_)) | Err(InstanceError::InfeasibleDensity { .. })
        ));
        assert!(generate_random(&g, 1, 1.0, 0, GoalPolicy::Anywhere).is_err());
    }

    #[test]
    fn environment_shapes() {
        let e1 = make_experiment_env(ExperimentEnv::Exp1);
        assert_eq!(e1.num_free(), 98);
        let e2 = make_experiment_env(ExperimentEnv::Exp2);
        assert_eq!((e2.size_x(), e2.size_y()), (14, 7));
        assert!(!e2.obstacles().is_empty());
        assert!(e2.is_connected());
        let e3 = make_experiment_env(ExperimentEnv::Exp3);
        assert_eq!(e3.num_free(), 735);
        assert!(e3.is_connected());
        let e4 = make_experiment_env(ExperimentEnv::Exp4);
        assert_eq!(e4.obstacles().len(), 90);
        assert_eq!(e4.num_free(), 645);
        assert!(e4.is_connected());
    }

    #[test]
    fn env_ids_parse() {
        assert_eq!("exp3".parse::<ExperimentEnv>().unwrap(), ExperimentEnv::Exp3);
        assert!("exp5".parse::<ExperimentEnv>().is_err());
    }

    #[test]
    fn parse_minimal_document() {
        let text = r#"{"size_x":2,"size_y":1,"obstacles":[],"targets":[{"start":[0,0],"goal":[1,0]}],"obstructing":[]}"#;
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.grid().num_cells(), 2);
        assert_eq!(inst.targets()[0].goal, Vertex::new(1, 0));
    }

    #[test]
    fn parse_semantic_errors() {
        let overlap = r#"{"size_x":3,"size_y":1,"obstacles":[],"targets":[{"start":[0,0],"goal":[2,0]}],"obstructing":[[0,0]]}"#;
        let err = parse_instance(overlap).unwrap_err();
        assert_eq!(err, InstanceError::OverlappingStarts(Vertex::new(0, 0)));
        assert!(err.to_string().contains("overlapping starts"));

        let oob = r#"{"size_x":2,"size_y":1,"obstacles":[],"targets":[{"start":[0,0],"goal":[5,0]}],"obstructing":[]}"#;
        assert!(matches!(parse_instance(oob), Err(InstanceError::OutOfBounds { .. })));

        let dense = r#"{"size_x":2,"size_y":1,"obstacles":[],"targets":[{"start":[0,0],"goal":[1,0]}],"obstructing":[[1,0]]}"#;
        assert!(matches!(parse_instance(dense), Err(InstanceError::TooDense { .. })));

        let none = r#"{"size_x":2,"size_y":1,"obstacles":[],"targets":[],"obstructing":[]}"#;
        assert_eq!(parse_instance(none), Err(InstanceError::NoTargets));
    }

    #[test]
    fn parse_syntax_error_reports_position() {
        let err = parse_instance("{\n  \"size_x\": 2,\n  oops\n}").unwrap_err();
        match err {
            InstanceError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn goal_under_obstructor_is_accepted_on_parse() {
        let text = r#"{"size_x":3,"size_y":1,"obstacles":[],"targets":[{"start":[0,0],"goal":[2,0]}],"obstructing":[[2,0]]}"#;
        assert!(parse_instance(text).is_ok());
    }

    #[test]
    fn large_instance_roundtrip() {
        let g = make_experiment_env(ExperimentEnv::Exp3);
        let inst = generate_random(&g, 12, 0.95, 5, GoalPolicy::Perimeter).unwrap();
        assert_eq!(parse_instance(&serialize_instance(&inst)).unwrap(), inst);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn generated_instances_are_valid_and_roundtrip(
            env_i in 0usize..4,
            tenth in 0u32..10,
            seed in any::<u64>(),
        ) {
            let env = ExperimentEnv::ALL[env_i];
            let g = make_experiment_env(env);
            let density = if tenth == 9 { 0.95 } else { tenth as f64 / 10.0 };
            let inst = match generate_random(&g, env.default_targets(), density, seed, env.default_goal_policy()) {
                Ok(i) => i,
                // exp2 at 0.95 cannot fit two goals
                Err(InstanceError::InfeasibleDensity { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            prop_assert_eq!(inst.obstructors().len(), obstructor_count(&g, density));
            let mut seen = HashSet::new();
            for t in inst.targets() {
                prop_assert!(g.is_free(t.start) && g.is_free(t.goal));
            }
            for v in inst.starts() {
                prop_assert!(seen.insert(v));
            }
            for t in inst.targets() {
                prop_assert!(!inst.obstructors().iter().any(|o| o.start == t.goal));
            }
            prop_assert!(inst.num_agents() < g.num_free());
            prop_assert_eq!(parse_instance(&serialize_instance(&inst)).unwrap(), inst);
        }
    }

    #[test]
    fn obstructor_count_matches_floor_formula() {
        let g = make_experiment_env(ExperimentEnv::Exp1);
        for (d, expected) in [
            (0.0, 0),
            (0.1, 9),
            (0.2, 19),
            (0.3, 29),
            (0.4, 39),
            (0.5, 49),
            (0.6, 58),
            (0.7, 68),
            (0.8, 78),
            (0.9, 88),
            (0.95, 93),
        ] {
            assert_eq!(obstructor_count(&g, d), expected, "density {d}");
        }
    }
}
