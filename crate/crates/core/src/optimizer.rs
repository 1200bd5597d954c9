//! Deployment search over a grid of candidate mounting points: exhaustive
//! enumeration of every selection with `K` sub-arrays, and a greedy search
//! that grows a deployment one grid point at a time.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deployment::{Grid, Selection};
use crate::error::{Error, Result};
use crate::metric::{ContributionTable, InformationTable};
use crate::scenario::Mode;

/// `C(n, k)`, zero for `k > n`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Number of selections with exactly `k` sub-arrays from `singles`
/// one-placement points and `pairs` mirrored points.
pub fn count_selections(singles: usize, pairs: usize, k: usize) -> u64 {
    (0..=k / 2).map(|j| binomial(pairs, j) * binomial(singles, k - 2 * j)).sum()
}

/// Every selection of grid points realising exactly `k` sub-arrays, in
/// lexicographic order of their sorted id sequences.
pub fn enumerate_selections(grid: &Grid, k: usize) -> Vec<Selection> {
    let sizes: Vec<usize> = grid.points.iter().map(|p| p.placement_count()).collect();
    // capacity of the points from index i on
    let mut tail = vec![0; sizes.len() + 1];
    for i in (0..sizes.len()).rev() {
        tail[i] = tail[i + 1] + sizes[i];
    }
    let mut out = Vec::new();
    if k == 0 || k > tail[0] {
        return out;
    }
    fn dfs(start: usize, left: usize, mask: u64, sizes: &[usize], tail: &[usize], out: &mut Vec<Selection>) {
        for i in start..sizes.len() {
            if tail[i] < left {
                break;
            }
            if sizes[i] > left {
                continue;
            }
            let m = mask | 1 << i;
            if sizes[i] == left {
                out.push(Selection(m));
            } else {
                dfs(i + 1, left - sizes[i], m, sizes, tail, out);
            }
        }
    }
    dfs(0, k, 0, &sizes, &tail, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Exhaustive,
    Greedy,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Exhaustive => "exhaustive",
            Strategy::Greedy => "greedy",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Strategy::Exhaustive),
            "greedy" => Ok(Strategy::Greedy),
            _ => Err(Error::Config(format!("unknown strategy `{s}` (expected exhaustive or greedy)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSelection {
    pub selection: Selection,
    pub ids: Vec<usize>,
    pub sub_arrays: usize,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub strategy: Strategy,
    pub mode: Mode,
    /// Requested number of sub-arrays.
    pub k_target: usize,
    /// Sub-arrays in the returned best deployment; greedy may overshoot by
    /// one when the last added point is a mirrored pair.
    pub k_actual: usize,
    /// Identifiable candidates, ascending in ρ; ties keep enumeration
    /// order.
    pub ranking: Vec<RankedSelection>,
    pub total: usize,
    pub identifiable: usize,
    pub discarded: usize,
    pub best: RankedSelection,
    /// Greedy: ρ of the initial deployment and after every iteration.
    pub trace: Vec<f64>,
}

impl TrialResult {
    /// `selection_bitmask,rho` lines, ranking order.
    pub fn ranking_csv(&self) -> String {
        let mut s = String::from("selection,rho_m\n");
        for r in &self.ranking {
            s.push_str(&format!("{},{:e}\n", r.selection, r.rho));
        }
        s
    }
}

/// Scores selections of one grid in one mode, caching ρ by selection.
pub struct Evaluator<'a> {
    grid: &'a Grid,
    table: ContributionTable,
    epsilon: f64,
    cache: Mutex<HashMap<Selection, Option<f64>>>,
    evaluations: AtomicUsize,
}

impl<'a> Evaluator<'a> {
    /// `table` must have been built from `grid.placements(..)`.
    pub fn new(grid: &'a Grid, table: &InformationTable, mode: Mode, epsilon: f64) -> Result<Self> {
        if table.placements() != grid.placement_count() {
            return Err(Error::InvalidInput(format!(
                "information table has {} placements, grid has {}",
                table.placements(),
                grid.placement_count()
            )));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Config(format!("percentile ε must lie in [0, 1), got {epsilon}")));
        }
        Ok(Evaluator {
            grid,
            table: table.contributions(mode),
            epsilon,
            cache: Mutex::new(HashMap::new()),
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn mode(&self) -> Mode {
        self.table.mode()
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    /// ρ of a selection, `None` when not identifiable at every pose.
    pub fn rho(&self, sel: Selection) -> Option<f64> {
        if let Some(v) = self.cache.lock().unwrap().get(&sel) {
            return *v;
        }
        let v = self.table.rho(&self.grid.placement_indices(sel), self.epsilon);
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.cache.lock().unwrap().insert(sel, v);
        v
    }

    /// Number of ρ computations performed (cache misses).
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn ranked(&self, sel: Selection, rho: f64) -> RankedSelection {
        RankedSelection { selection: sel, ids: sel.ids(), sub_arrays: self.grid.sub_array_count(sel), rho }
    }
}

fn sort_by_rho(v: &mut [RankedSelection]) {
    v.sort_by(|a, b| a.rho.total_cmp(&b.rho));
}

/// Score every selection with `k` sub-arrays.
pub fn exhaustive_search(eval: &Evaluator, k: usize) -> Result<TrialResult> {
    let sels = enumerate_selections(eval.grid, k);
    if sels.is_empty() {
        return Err(Error::Infeasible { k });
    }
    let scored: Vec<(Selection, Option<f64>)> = sels.par_iter().map(|&s| (s, eval.rho(s))).collect();
    let mut ranking: Vec<RankedSelection> =
        scored.iter().filter_map(|&(s, r)| r.map(|r| eval.ranked(s, r))).collect();
    sort_by_rho(&mut ranking);
    let total = sels.len();
    let best = ranking.first().cloned().ok_or(Error::NoIdentifiableDeployment { total })?;
    Ok(TrialResult {
        strategy: Strategy::Exhaustive,
        mode: eval.mode(),
        k_target: k,
        k_actual: best.sub_arrays,
        identifiable: ranking.len(),
        discarded: total - ranking.len(),
        total,
        best,
        ranking,
        trace: Vec::new(),
    })
}

/// Initial greedy deployment: the mirrored roof-level point nearest the
/// roof centre, taken as the centroid of the highest placements.
pub fn default_initial(grid: &Grid) -> Result<Selection> {
    let top = grid
        .points
        .iter()
        .flat_map(|p| p.placements.iter())
        .map(|(pos, _)| pos.z)
        .fold(f64::NEG_INFINITY, f64::max);
    let roof: Vec<_> = grid
        .points
        .iter()
        .flat_map(|p| p.placements.iter().map(move |(pos, _)| (p, *pos)))
        .filter(|(_, pos)| pos.z > top - 0.05)
        .collect();
    let n = roof.len() as f64;
    let (cx, cy) = roof.iter().fold((0.0, 0.0), |(x, y), (_, p)| (x + p.x / n, y + p.y / n));
    roof.iter()
        .filter(|(p, _)| p.is_mirrored())
        .map(|(p, pos)| (p.id, (pos.x - cx).hypot(pos.y - cy)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| Selection::from_ids(&[id]))
        .ok_or_else(|| Error::Config("grid has no mirrored roof-level point for the greedy start".into()))
}

/// Grow `initial` one grid point per iteration, each time adding the point
/// that minimizes ρ (ties to the smaller id), until at least `k`
/// sub-arrays are placed.
pub fn greedy_search(eval: &Evaluator, k: usize, initial: Selection) -> Result<TrialResult> {
    let grid = eval.grid;
    if k == 0 || k > grid.placement_count() {
        return Err(Error::Infeasible { k });
    }
    if initial.is_empty() || initial.ids().iter().any(|&i| i >= grid.len()) {
        return Err(Error::InvalidInput(format!("initial selection {initial} is empty or outside the grid")));
    }
    let mut current = initial;
    let mut reached = grid.sub_array_count(current);
    if reached > k {
        return Err(Error::InvalidInput(format!("initial selection already has {reached} > {k} sub-arrays")));
    }
    let Some(rho0) = eval.rho(current) else {
        return Err(Error::InvalidInput(format!("initial selection {initial} is not identifiable")));
    };
    let mut ranking = vec![eval.ranked(current, rho0)];
    let mut trace = vec![rho0];
    let mut total = 1;
    while reached < k {
        let candidates: Vec<usize> = (0..grid.len()).filter(|&i| !current.contains(i)).collect();
        if candidates.is_empty() {
            return Err(Error::GreedyStalled { reached, target: k });
        }
        let scored: Vec<(usize, Option<f64>)> =
            candidates.par_iter().map(|&i| (i, eval.rho(current.with(i)))).collect();
        total += scored.len();
        ranking.extend(scored.iter().filter_map(|&(i, r)| r.map(|r| eval.ranked(current.with(i), r))));
        // first minimum in id order
        let Some((id, rho)) = scored
            .iter()
            .filter_map(|&(i, r)| r.map(|r| (i, r)))
            .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
                Some((_, b)) if b <= r => best,
                _ => Some((i, r)),
            })
        else {
            return Err(Error::GreedyStalled { reached, target: k });
        };
        current = current.with(id);
        reached = grid.sub_array_count(current);
        trace.push(rho);
    }
    sort_by_rho(&mut ranking);
    let best = eval.ranked(current, *trace.last().expect("trace is never empty"));
    Ok(TrialResult {
        strategy: Strategy::Greedy,
        mode: eval.mode(),
        k_target: k,
        k_actual: reached,
        identifiable: ranking.len(),
        discarded: total - ranking.len(),
        total,
        best,
        ranking,
        trace,
    })
}

/// Trials fix the total element count `K·M`.
pub fn check_element_budget(k: usize, m: usize, budget: usize) -> Result<()> {
    if k * m != budget {
        return Err(Error::Config(format!("K·M = {k}·{m} = {} differs from the element budget {budget}", k * m)));
    }
    Ok(())
}
