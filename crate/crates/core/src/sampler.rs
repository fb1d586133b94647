//! Multi-restart posterior sampling over concept bottleneck models, accuracy filtering,
//! and the pool archive format.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hmc::{hmc_chain, ChainStats, HmcConfig, Target};
use crate::model::{CbmPosterior, ConceptParams, LabelParams, PinnedConcept, PosteriorSample, PriorSpec};
use crate::par::Execution;

pub const DEFAULT_T_ACC: f64 = 0.9;

/// Independent RNG stream for one restart chain.
pub fn chain_rng(seed: u64, chain_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_id as u64);
    rng
}

/// Sampling provenance carried alongside a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: HmcConfig,
    pub prior: PriorSpec,
    pub k: usize,
    pub chain_stats: Vec<ChainStats>,
    /// Draws before any accuracy filter.
    pub drawn: usize,
    pub t_acc: Option<f64>,
    pub filtered_empty: bool,
}

/// Posterior samples, after filtering all with accuracy at least `t_acc`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalPool {
    pub samples: Vec<PosteriorSample>,
    pub t_acc: f64,
    pub provenance: Provenance,
    pub pinned: Option<PinnedConcept>,
}

impl ProposalPool {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn k(&self) -> usize {
        self.provenance.k
    }
}

/// Draws an initial state from the prior.
fn prior_draw(target: &CbmPosterior<'_>, d: usize, prior: &PriorSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let theta_len = target.dim() - target.k() - 1;
    debug_assert_eq!(theta_len % (d + 1), 0);
    let theta = Normal::new(0.0, prior.std_theta).expect("validated prior");
    let phi = Normal::new(0.0, prior.std_phi).expect("validated prior");
    (0..target.dim())
        .map(|i| if i < theta_len { theta.sample(rng) } else { phi.sample(rng) })
        .collect()
}

/// Runs `config.restarts` independent chains and materializes every retained draw.
pub fn run_restarts(
    data: &Dataset,
    k: usize,
    prior: &PriorSpec,
    config: &HmcConfig,
    pinned: Option<&PinnedConcept>,
) -> Result<ProposalPool> {
    run_restarts_with(data, k, prior, config, pinned, Execution::default(), &|_| {})
}

/// [`run_restarts`] with an explicit execution strategy and a callback invoked once per
/// finished chain with the number of chains completed so far.
pub fn run_restarts_with(
    data: &Dataset,
    k: usize,
    prior: &PriorSpec,
    config: &HmcConfig,
    pinned: Option<&PinnedConcept>,
    exec: Execution,
    on_chain_done: &(dyn Fn(usize) + Sync),
) -> Result<ProposalPool> {
    config.validate()?;
    let target = CbmPosterior::new(data, k, *prior, pinned)?;
    let done = std::sync::atomic::AtomicUsize::new(0);

    let chains = exec.map(config.restarts, |chain_id| -> Result<(Vec<PosteriorSample>, ChainStats)> {
        let mut rng = chain_rng(config.seed, chain_id);
        let init = prior_draw(&target, data.d(), prior, &mut rng);
        let out = hmc_chain(&init, config, &target, &mut rng)?;
        let samples = out
            .draws
            .iter()
            .enumerate()
            .map(|(draw_index, q)| {
                let (theta, phi) = target.unpack(q)?;
                PosteriorSample::materialize(&target, theta, phi, chain_id, draw_index)
            })
            .collect::<Result<Vec<_>>>()?;
        let finished = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
        on_chain_done(finished);
        Ok((samples, out.stats))
    });

    let mut samples = Vec::with_capacity(config.restarts * config.samples_per_restart);
    let mut chain_stats = Vec::with_capacity(config.restarts);
    for chain in chains {
        let (s, stats) = chain?;
        samples.extend(s);
        chain_stats.push(stats);
    }
    for stats in &chain_stats {
        if stats.divergences > 0 {
            log::debug!("chain had {} divergent proposals", stats.divergences);
        }
    }
    let drawn = samples.len();
    Ok(ProposalPool {
        samples,
        t_acc: 0.0,
        provenance: Provenance {
            config: *config,
            prior: *prior,
            k,
            chain_stats,
            drawn,
            t_acc: None,
            filtered_empty: false,
        },
        pinned: pinned.cloned(),
    })
}

/// Keeps, in order, exactly the samples with accuracy `>= t_acc`.
pub fn filter_predictive(pool: &ProposalPool, t_acc: f64) -> ProposalPool {
    let samples: Vec<_> = pool.samples.iter().filter(|s| s.accuracy >= t_acc).cloned().collect();
    let mut provenance = pool.provenance.clone();
    provenance.t_acc = Some(t_acc);
    provenance.filtered_empty = samples.is_empty();
    if samples.is_empty() {
        log::warn!("no samples reached accuracy {t_acc}");
    }
    ProposalPool { samples, t_acc, provenance, pinned: pool.pinned.clone() }
}

#[derive(Serialize, Deserialize)]
struct ArchivedSample {
    theta: ConceptParams,
    phi: LabelParams,
    accuracy: f64,
    chain_id: usize,
    draw_index: usize,
}

#[derive(Serialize, Deserialize)]
struct PoolArchive {
    config: HmcConfig,
    dataset_hash: String,
    k: usize,
    prior: PriorSpec,
    t_acc: f64,
    #[serde(default)]
    provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pinned: Option<PinnedConcept>,
    samples: Vec<ArchivedSample>,
}

impl ProposalPool {
    /// Archive JSON: `{config, dataset_hash, samples: [{theta, phi, accuracy, chain_id, draw_index}], ...}`.
    /// Activations are not stored.
    pub fn to_archive_json(&self, data: &Dataset) -> Result<String> {
        let archive = PoolArchive {
            config: self.provenance.config,
            dataset_hash: data.content_hash(),
            k: self.provenance.k,
            prior: self.provenance.prior,
            t_acc: self.t_acc,
            provenance: Some(self.provenance.clone()),
            pinned: self.pinned.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| ArchivedSample {
                    theta: s.concept_params.clone(),
                    phi: s.label_params.clone(),
                    accuracy: s.accuracy,
                    chain_id: s.chain_id,
                    draw_index: s.draw_index,
                })
                .collect(),
        };
        Ok(serde_json::to_string(&archive)?)
    }

    /// Loads an archive, recomputing activations against `data` and checking its hash and accuracies.
    pub fn from_archive_json(text: &str, data: &Dataset) -> Result<Self> {
        let archive: PoolArchive = serde_json::from_str(text)?;
        let hash = data.content_hash();
        if archive.dataset_hash != hash {
            return Err(Error::Archive(format!("archive hash {} != dataset hash {hash}", archive.dataset_hash)));
        }
        let target = CbmPosterior::new(data, archive.k, archive.prior, archive.pinned.as_ref())?;
        let samples = archive
            .samples
            .into_iter()
            .map(|s| {
                let sample = PosteriorSample::materialize(&target, s.theta, s.phi, s.chain_id, s.draw_index)?;
                if sample.accuracy != s.accuracy {
                    return Err(Error::Archive(format!(
                        "sample ({}, {}) accuracy {} does not reproduce (got {})",
                        s.chain_id, s.draw_index, s.accuracy, sample.accuracy
                    )));
                }
                Ok(sample)
            })
            .collect::<Result<Vec<_>>>()?;
        let provenance = archive.provenance.unwrap_or(Provenance {
            config: archive.config,
            prior: archive.prior,
            k: archive.k,
            chain_stats: Vec::new(),
            drawn: samples.len(),
            t_acc: Some(archive.t_acc),
            filtered_empty: samples.is_empty(),
        });
        Ok(Self { samples, t_acc: archive.t_acc, provenance, pinned: archive.pinned })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0 - 1.0]).collect();
        let labels = (0..20).map(|i| u8::from(i >= 10)).collect();
        Dataset::from_rows(&rows, labels).unwrap()
    }

    fn quick() -> HmcConfig {
        HmcConfig { step_size: 0.05, leapfrog_steps: 5, burn_in_steps: 20, samples_per_restart: 6, restarts: 3, seed: 9, thinning: 1 }
    }

    fn pool_with_accuracies(acc: &[f64]) -> ProposalPool {
        let data = toy();
        let mut pool = run_restarts(&data, 1, &PriorSpec::default(), &HmcConfig { restarts: 1, samples_per_restart: acc.len(), ..quick() }, None).unwrap();
        for (s, a) in pool.samples.iter_mut().zip(acc) {
            s.accuracy = *a;
        }
        pool
    }

    #[test]
    fn pool_size_and_order() {
        let pool = run_restarts(&toy(), 2, &PriorSpec::default(), &quick(), None).unwrap();
        assert_eq!(pool.len(), 18);
        let keys: Vec<_> = pool.samples.iter().map(|s| (s.chain_id, s.draw_index)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(pool.provenance.chain_stats.len(), 3);
    }

    #[test]
    fn sequential_and_parallel_pools_are_identical() {
        let data = toy();
        let a = run_restarts_with(&data, 2, &PriorSpec::default(), &quick(), None, Execution::Sequential, &|_| {}).unwrap();
        let b = run_restarts_with(&data, 2, &PriorSpec::default(), &quick(), None, Execution::Parallel, &|_| {}).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn filter_examples() {
        let pool = pool_with_accuracies(&[0.8, 0.95, 0.99]);
        assert_eq!(filter_predictive(&pool, 0.0).samples, pool.samples);
        let none = filter_predictive(&pool, 1.0 + 1e-9);
        assert!(none.is_empty());
        assert!(none.provenance.filtered_empty);
        let kept = filter_predictive(&pool, 0.9);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept.samples[0].accuracy, 0.95);
        assert!(kept.samples.iter().all(|s| s.accuracy >= 0.9));
    }

    #[test]
    fn pinned_column_is_verbatim() {
        let data = toy();
        let values: Vec<f64> = data.labels().iter().map(|&y| f64::from(y)).collect();
        let pin = PinnedConcept { column_index: 1, values: values.clone() };
        let pool = run_restarts(&data, 2, &PriorSpec::default(), &quick(), Some(&pin)).unwrap();
        for s in &pool.samples {
            assert_eq!(s.activations.column(1), values);
        }
    }

    #[test]
    fn archive_round_trip_and_hash_check() {
        let data = toy();
        let pool = filter_predictive(&run_restarts(&data, 2, &PriorSpec::default(), &quick(), None).unwrap(), 0.5);
        let text = pool.to_archive_json(&data).unwrap();
        let back = ProposalPool::from_archive_json(&text, &data).unwrap();
        assert_eq!(back.samples, pool.samples);

        let other = Dataset::from_rows(&[vec![0.0], vec![1.0]], vec![0, 1]).unwrap();
        assert!(matches!(ProposalPool::from_archive_json(&text, &other), Err(Error::Archive(_))));
    }
}
