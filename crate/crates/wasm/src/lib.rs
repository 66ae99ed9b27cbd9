//! Browser bindings: half-plane projection playground, a stepwise community
//! run and the iteration-bound calculator.

use p2p_trade::index::DecisionIndex;
use p2p_trade::io::load_bundled;
use p2p_trade::model::{net_output, ConstraintFamily, SeparableQuadratic};
use p2p_trade::polyhedron::{Polyhedron, PolyhedronBuilder, RowTag};
use p2p_trade::problem::SplitProblem;
use p2p_trade::projection::{project, DEFAULT_TOLERANCE};
use p2p_trade::scenario::CommunityScenario;
use p2p_trade::solver::{default_learning_rate, iteration_bound, CentralReplay, SolverConfig};
use p2p_trade::{Error, Result};
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn half_planes(planes: &[f64], owners: &[u32], agent: Option<u32>) -> Result<Polyhedron> {
    if planes.len() != 3 * owners.len() {
        return Err(Error::Domain(format!(
            "{} plane coefficients for {} owners; expected three per plane",
            planes.len(),
            owners.len()
        )));
    }
    let mut b = PolyhedronBuilder::new(agent.unwrap_or(0) as usize);
    for (p, &o) in planes.chunks_exact(3).zip(owners) {
        if agent.is_none_or(|a| a == o) {
            b.le(vec![(0, p[0]), (1, p[1])], p[2], RowTag::new(ConstraintFamily::LineFlow, None, "half-plane"));
        }
    }
    Ok(b.finish())
}

/// Averaged projections in the plane. Each agent owns the half-planes
/// `a1 x + a2 y <= b` tagged with its id; returns the flattened path
/// `[x0, y0, x1, y1, ...]` followed by the exact projection of the start
/// onto the intersection.
pub fn projection_path(planes: &[f64], owners: &[u32], start: [f64; 2], rounds: usize) -> Result<Vec<f64>> {
    let mut ids: Vec<u32> = owners.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::Domain("draw at least one half-plane".into()));
    }
    let sets = ids
        .iter()
        .map(|&a| half_planes(planes, owners, Some(a)))
        .collect::<Result<Vec<_>>>()?;
    let owner = vec![0; 2];
    let problem = SplitProblem::new(owner, sets, SeparableQuadratic::zeros(2));
    let config = SolverConfig {
        initial: Some(start.to_vec()),
        ..SolverConfig::default()
    };
    let mut replay = CentralReplay::new(&problem, &config)?;
    let mut path = start.to_vec();
    for _ in 0..rounds {
        replay.inner_step()?;
        path.extend_from_slice(replay.state());
    }
    let all = half_planes(planes, owners, None)?;
    let exact = project(&all, &start, DEFAULT_TOLERANCE)?;
    let mut full = start.to_vec();
    exact.scatter(&all.support, &mut full);
    path.extend_from_slice(&full);
    Ok(path)
}

#[wasm_bindgen(js_name = projectionPath)]
pub fn projection_path_js(planes: &[f64], owners: &[u32], x: f64, y: f64, rounds: usize) -> std::result::Result<Vec<f64>, JsError> {
    projection_path(planes, owners, [x, y], rounds).map_err(js)
}

/// `[k_bar, n_bar, n_max]`.
#[wasm_bindgen(js_name = iterationBound)]
pub fn iteration_bound_js(l: f64, r0: f64, epsilon: f64, eta: f64) -> std::result::Result<Vec<f64>, JsError> {
    let b = iteration_bound(l, r0, epsilon, eta).map_err(js)?;
    Ok(vec![b.k_bar, b.n_bar, b.n_max])
}

/// The bundled community advanced one outer iteration at a time.
#[wasm_bindgen]
pub struct Community {
    scenario: CommunityScenario,
    index: DecisionIndex,
    problem: SplitProblem,
    config: SolverConfig,
    x: Vec<f64>,
    steps: usize,
}

impl Community {
    pub fn create(lipschitz: Option<f64>, n_inner: usize) -> Result<Community> {
        let (scenario, _) = load_bundled("ieee13_p2p")?;
        let index = DecisionIndex::new(&scenario)?;
        let problem = SplitProblem::stage1(&scenario, &index)?;
        let config = SolverConfig {
            lipschitz: lipschitz.unwrap_or_else(|| default_learning_rate(&scenario, false)),
            inner: p2p_trade::solver::InnerSchedule::Constant(n_inner),
            ..SolverConfig::default()
        };
        config.validate(problem.dim())?;
        let x = vec![0.0; problem.dim()];
        Ok(Community {
            scenario,
            index,
            problem,
            config,
            x,
            steps: 0,
        })
    }

    /// One gradient step plus its inner rounds; returns
    /// `[objective, max_violation]` at the new iterate.
    pub fn advance(&mut self) -> Result<[f64; 2]> {
        let config = SolverConfig {
            initial: Some(std::mem::take(&mut self.x)),
            ..self.config.clone()
        };
        let mut replay = CentralReplay::new(&self.problem, &config)?;
        replay.gradient_step();
        for _ in 0..config.inner.rounds(self.steps) {
            replay.inner_step()?;
        }
        self.x = replay.state().to_vec();
        self.steps += 1;
        Ok([self.problem.objective.value(&self.x), self.problem.max_violation(&self.x)])
    }
}

#[wasm_bindgen]
impl Community {
    /// `lipschitz <= 0` picks the scenario's default.
    #[wasm_bindgen(constructor)]
    pub fn new(lipschitz: f64, n_inner: usize) -> std::result::Result<Community, JsError> {
        Community::create((lipschitz > 0.0).then_some(lipschitz), n_inner).map_err(js)
    }

    pub fn step(&mut self) -> std::result::Result<Vec<f64>, JsError> {
        self.advance().map(|v| v.to_vec()).map_err(js)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn lipschitz(&self) -> f64 {
        self.config.lipschitz
    }

    #[wasm_bindgen(js_name = numProsumers)]
    pub fn num_prosumers(&self) -> usize {
        self.scenario.num_prosumers()
    }

    #[wasm_bindgen(js_name = numSteps)]
    pub fn num_steps(&self) -> usize {
        self.index.num_steps()
    }

    /// Net outputs in kW, row-major by prosumer.
    #[wasm_bindgen(js_name = netOutputs)]
    pub fn net_outputs(&self) -> Vec<f64> {
        (0..self.num_prosumers())
            .flat_map(|i| (0..self.num_steps()).map(move |t| (i, t)))
            .map(|(i, t)| net_output(&self.x, &self.scenario, &self.index, i, t))
            .collect()
    }
}
