//! Central finite-difference checks of tape gradients, grouped by the
//! parameter group (first dotted name segment).

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mat, ParamStore};

/// Agreement of analytic and numeric gradients for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`; zero when both
    /// vanish.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub entries: usize,
}

impl GroupCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_error <= tol
    }
}

/// Compares `analytic` (indexed by parameter id) against central
/// differences of `loss`. At most `max_entries` coordinates per parameter
/// are probed, chosen with a fixed seed.
pub fn check_gradients(
    store: &ParamStore,
    analytic: &[Option<Mat>],
    loss: impl Fn(&ParamStore) -> f64,
    step: f64,
    max_entries: usize,
) -> Vec<GroupCheck> {
    let mut probe = store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    // group -> (Σ(a−n)², Σa², Σn², entries)
    let mut acc: BTreeMap<String, (f64, f64, f64, usize)> = BTreeMap::new();
    for id in store.ids() {
        let len = store.get(id).len();
        let picks: Vec<usize> = if len <= max_entries {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, max_entries).into_vec();
            v.sort_unstable();
            v
        };
        let entry = acc.entry(store.group(id).to_string()).or_default();
        let cols = store.get(id).ncols();
        for flat in picks {
            let ix = [flat / cols, flat % cols];
            let orig = store.get(id)[ix];
            probe.get_mut(id)[ix] = orig + step;
            let up = loss(&probe);
            probe.get_mut(id)[ix] = orig - step;
            let down = loss(&probe);
            probe.get_mut(id)[ix] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(id.index()).and_then(|g| g.as_ref()).map_or(0.0, |g| g[ix]);
            entry.0 += (a - numeric).powi(2);
            entry.1 += a * a;
            entry.2 += numeric * numeric;
            entry.3 += 1;
        }
    }
    acc.into_iter()
        .map(|(group, (d, a, n, entries))| {
            let (an, nn) = (a.sqrt(), n.sqrt());
            let denom = an.max(nn);
            GroupCheck {
                group,
                rel_error: if denom < 1e-12 { 0.0 } else { d.sqrt() / denom },
                analytic_norm: an,
                numeric_norm: nn,
                entries,
            }
        })
        .collect()
}
