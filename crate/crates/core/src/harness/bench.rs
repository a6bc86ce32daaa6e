//! Runtime comparison between the exposure-space pipeline and the
//! bistochastic-matrix baseline on large synthetic queries.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::convex::scalarized_birkhoff_qp;
use crate::decomposition::{bvn_decompose, caratheodory_decompose, expected_exposure};
use crate::error::Result;
use crate::expohedron::membership_tol;
use crate::model::{Atom, RankingDistribution};
use crate::pareto::sphere_expo_front;

use super::dataset::random_instance;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchSettings {
    pub queries: usize,
    pub items: usize,
    pub seed: u64,
    pub rounds: usize,
    pub n_sample: usize,
    pub alpha_grid: usize,
    pub birkhoff_budget: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            queries: 20,
            items: 100,
            seed: 2024,
            rounds: 3,
            n_sample: 4,
            alpha_grid: 20,
            birkhoff_budget: 300,
        }
    }
}

/// Mean seconds per query for each pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RuntimeComparison {
    pub settings: BenchSettings,
    pub caratheodory_seconds: f64,
    pub bvn_seconds: f64,
    pub sphere_seconds: f64,
    pub birkhoff_seconds: f64,
    pub mean_sphere_points: f64,
    pub mean_caratheodory_atoms: f64,
    pub mean_bvn_atoms: f64,
    /// Worst reconstruction error of either decomposition.
    pub max_reconstruction_error: f64,
    pub birkhoff_unconverged: usize,
}

impl RuntimeComparison {
    pub fn decomposition_speedup(&self) -> f64 {
        self.bvn_seconds / self.caratheodory_seconds.max(1e-12)
    }

    pub fn front_speedup(&self) -> f64 {
        self.birkhoff_seconds / self.sphere_seconds.max(1e-12)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<34} {:>14}", "stage (mean per query)", "seconds");
        let _ = writeln!(
            s,
            "{:<34} {:>14.6}",
            "caratheodory decomposition", self.caratheodory_seconds
        );
        let _ = writeln!(s, "{:<34} {:>14.6}", "bvn decomposition", self.bvn_seconds);
        let _ = writeln!(
            s,
            "{:<34} {:>14.6}",
            format!("sphere front (K={})", self.settings.rounds),
            self.sphere_seconds
        );
        let _ = writeln!(
            s,
            "{:<34} {:>14.6}",
            format!("birkhoff qp ({} alphas)", self.settings.alpha_grid),
            self.birkhoff_seconds
        );
        let _ = writeln!(
            s,
            "decomposition speedup {:.1}x, front speedup {:.1}x",
            self.decomposition_speedup(),
            self.front_speedup()
        );
        s
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Times both pipelines query by query on one thread.
///
/// The BvN input is the mid-grid Birkhoff solution; Carathéodory decomposes
/// that solution's exposure vector, so both reach the same point.
pub fn runtime_comparison(settings: &BenchSettings) -> Result<RuntimeComparison> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let k = settings.queries.max(1) as f64;
    let mut out = RuntimeComparison {
        settings: settings.clone(),
        caratheodory_seconds: 0.0,
        bvn_seconds: 0.0,
        sphere_seconds: 0.0,
        birkhoff_seconds: 0.0,
        mean_sphere_points: 0.0,
        mean_caratheodory_atoms: 0.0,
        mean_bvn_atoms: 0.0,
        max_reconstruction_error: 0.0,
        birkhoff_unconverged: 0,
    };
    let grid = settings.alpha_grid.max(2);
    for q in 0..settings.queries {
        let inst = random_instance(
            &mut rng,
            format!("bench-{q:03}"),
            settings.items,
            settings.items,
        );
        let gamma = inst.gamma();

        let t = Instant::now();
        let front = sphere_expo_front(&inst, settings.rounds, settings.n_sample)?;
        out.sphere_seconds += t.elapsed().as_secs_f64();
        out.mean_sphere_points += front.front.len() as f64;

        let t = Instant::now();
        let mut mid = None;
        for j in 0..grid {
            let alpha = j as f64 / (grid - 1) as f64;
            let r = scalarized_birkhoff_qp(&inst, alpha, settings.birkhoff_budget)?;
            if !r.converged {
                out.birkhoff_unconverged += 1;
            }
            if j == grid / 2 {
                mid = Some(r);
            }
        }
        out.birkhoff_seconds += t.elapsed().as_secs_f64();
        let mid = mid.expect("grid has a middle entry");

        let t = Instant::now();
        let perms = bvn_decompose(&mid.matrix, 1e-9)?;
        out.bvn_seconds += t.elapsed().as_secs_f64();
        out.mean_bvn_atoms += perms.len() as f64;
        let bvn = RankingDistribution::normalized(
            perms
                .into_iter()
                .map(|(weight, perm)| Atom { weight, perm })
                .collect(),
            1e-12,
        )?;

        let t = Instant::now();
        let cara = caratheodory_decompose(&mid.exposure, gamma, membership_tol(gamma))?;
        out.caratheodory_seconds += t.elapsed().as_secs_f64();
        out.mean_caratheodory_atoms += cara.atoms().len() as f64;

        for dist in [&bvn, &cara] {
            let x = expected_exposure(dist, gamma)?;
            out.max_reconstruction_error = out
                .max_reconstruction_error
                .max(max_abs_diff(&x, &mid.exposure));
        }
    }
    out.caratheodory_seconds /= k;
    out.bvn_seconds /= k;
    out.sphere_seconds /= k;
    out.birkhoff_seconds /= k;
    out.mean_sphere_points /= k;
    out.mean_caratheodory_atoms /= k;
    out.mean_bvn_atoms /= k;
    Ok(out)
}
