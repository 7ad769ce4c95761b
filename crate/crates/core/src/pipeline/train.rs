//! Minibatch CFM training with pluggable couplings.

use crate::coupling::{couple_cluster_ot, solve_dense};
use crate::datasets::PointCloud;
use crate::error::{Error, Result};
use crate::flow::GaussianSource;
use crate::net::{adam_step, cfm_loss_and_grad, clip_global_norm, AdamConfig, AdamState, TrainBatch, VectorFieldNet};
use crate::rng::Stream;
use crate::{sq_dist, Vec2};

use super::config::ClusterSampling;

/// Fixed source-target pairs of one cluster.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSet {
    pub x0: Vec<Vec2>,
    pub x1: Vec<Vec2>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }
}

/// Where `(x0, x1)` pairs of a minibatch come from.
#[derive(Clone, Debug)]
pub enum Coupler<'a> {
    /// Fresh source draws paired with shuffled targets.
    Random {
        source: &'a GaussianSource,
        targets: &'a [Vec2],
    },
    /// As `Random`, then re-paired by exact assignment inside the minibatch.
    BatchOt {
        source: &'a GaussianSource,
        targets: &'a [Vec2],
    },
    /// Precomputed per-cluster plans.
    Pairs {
        clusters: &'a [PairSet],
        sampling: ClusterSampling,
    },
    /// Per-cluster plans re-solved every epoch on fresh draws from each
    /// cluster's source. `first` is the plan for epoch 0; later epochs draw
    /// `members[k].len()` points from `sources[k]`.
    ClusterOt {
        sources: &'a [GaussianSource],
        members: &'a [PointCloud],
        first: &'a [PairSet],
        sampling: ClusterSampling,
        lap_cap: usize,
    },
}

/// Pair fresh source draws with each cluster by exact assignment.
pub fn cluster_pairs(
    sources: &[GaussianSource],
    members: &[PointCloud],
    lap_cap: usize,
    rng: &mut Stream,
) -> Result<Vec<PairSet>> {
    let drawn: Vec<PointCloud> = sources
        .iter()
        .zip(members)
        .map(|(gs, c)| PointCloud::new(draw_source(gs, c.len(), rng), 0, "source"))
        .collect();
    let plans = couple_cluster_ot(&drawn, members, lap_cap, rng.next_u64())?;
    Ok(plans
        .iter()
        .zip(drawn.iter().zip(members))
        .map(|(plan, (src, tgt))| PairSet {
            x0: plan.pairs.iter().map(|&(s, _)| src.points[s]).collect(),
            x1: plan.pairs.iter().map(|&(_, t)| tgt.points[t]).collect(),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean minibatch loss of every epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
}

struct PairCursor {
    order: Vec<usize>,
    pos: usize,
}

impl PairCursor {
    fn next(&mut self, rng: &mut Stream) -> usize {
        if self.pos == self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn draw_source(source: &GaussianSource, n: usize, rng: &mut Stream) -> Vec<Vec2> {
    (0..n)
        .map(|_| {
            let z = [rng.normal(), rng.normal()];
            source.transform(z)
        })
        .collect()
}

/// Run `settings.epochs` epochs of Adam on the CFM loss.
pub fn train_fm(net: &mut VectorFieldNet, coupler: &Coupler, settings: &TrainSettings) -> Result<TrainLog> {
    if settings.epochs == 0 || settings.batch_size == 0 {
        return Err(Error::parameter("epochs", "epochs and batch_size must be at least 1"));
    }
    let mut rng = Stream::new(settings.seed);
    let mut adam = AdamState::new(net, settings.adam);
    let mut log = TrainLog::default();
    let b = settings.batch_size;

    let (fixed, sampling): (&[PairSet], Option<ClusterSampling>) = match coupler {
        Coupler::Pairs { clusters, sampling } => (clusters, Some(*sampling)),
        Coupler::ClusterOt {
            sources,
            members,
            first,
            sampling,
            ..
        } => {
            if sources.len() != members.len() || first.len() != members.len() {
                return Err(Error::Shape("cluster, source and plan counts differ".into()));
            }
            if first.iter().zip(*members).any(|(p, c)| p.len() != c.len()) {
                return Err(Error::Shape("plan sizes differ from cluster sizes".into()));
            }
            (first, Some(*sampling))
        }
        _ => (&[], None),
    };
    let total = match coupler {
        Coupler::Random { targets, .. } | Coupler::BatchOt { targets, .. } => targets.len(),
        _ => fixed.iter().map(PairSet::len).sum(),
    };
    if total == 0 {
        return Err(Error::EmptyInput("training data"));
    }
    let steps_per_epoch = total.div_ceil(b);

    // pooled (cluster, pair) index used for proportional sampling
    // cluster sizes never change between epochs, so these stay valid
    let pooled: Vec<(usize, usize)> = fixed
        .iter()
        .enumerate()
        .flat_map(|(k, c)| (0..c.len()).map(move |i| (k, i)))
        .collect();
    let mut cursors: Vec<PairCursor> = fixed
        .iter()
        .map(|c| PairCursor {
            order: (0..c.len()).collect(),
            pos: c.len(),
        })
        .collect();
    let non_empty: Vec<usize> = cursors
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.order.is_empty())
        .map(|(k, _)| k)
        .collect();

    let mut order: Vec<usize> = (0..total).collect();
    let mut refreshed: Vec<PairSet> = Vec::new();
    for epoch in 0..settings.epochs {
        if let Coupler::ClusterOt {
            sources,
            members,
            lap_cap,
            ..
        } = coupler
        {
            if epoch > 0 {
                refreshed = cluster_pairs(sources, members, *lap_cap, &mut rng)?;
            }
        }
        let clusters: &[PairSet] = if refreshed.is_empty() { fixed } else { &refreshed };
        if sampling != Some(ClusterSampling::Uniform) {
            rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for step in 0..steps_per_epoch {
            let lo = step * b;
            let hi = (lo + b).min(total);
            let m = hi - lo;
            let mut batch = TrainBatch::default();
            match coupler {
                Coupler::Random { source, targets } => {
                    batch.x1 = order[lo..hi].iter().map(|&i| targets[i]).collect();
                    batch.x0 = draw_source(source, m, &mut rng);
                }
                Coupler::BatchOt { source, targets } => {
                    let x1: Vec<Vec2> = order[lo..hi].iter().map(|&i| targets[i]).collect();
                    let x0 = draw_source(source, m, &mut rng);
                    let mut cost = Vec::with_capacity(m * m);
                    for &a in &x0 {
                        cost.extend(x1.iter().map(|&t| sq_dist(a, t)));
                    }
                    let (cols, _) = solve_dense(&cost, m)?;
                    batch.x1 = cols.iter().map(|&c| x1[c]).collect();
                    batch.x0 = x0;
                }
                Coupler::Pairs { .. } | Coupler::ClusterOt { .. } => match sampling.unwrap() {
                    ClusterSampling::Proportional => {
                        for &p in &order[lo..hi] {
                            let (k, i) = pooled[p];
                            batch.x0.push(clusters[k].x0[i]);
                            batch.x1.push(clusters[k].x1[i]);
                        }
                    }
                    ClusterSampling::Uniform => {
                        for _ in 0..m {
                            let k = non_empty[rng.below(non_empty.len())];
                            let i = cursors[k].next(&mut rng);
                            batch.x0.push(clusters[k].x0[i]);
                            batch.x1.push(clusters[k].x1[i]);
                        }
                    }
                },
            }
            batch.t = (0..m).map(|_| rng.uniform()).collect();

            let (loss, mut grads) = cfm_loss_and_grad(net, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            if settings.grad_clip > 0.0 {
                clip_global_norm(&mut grads, settings.grad_clip);
            }
            adam_step(net, &mut adam, &grads)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}, step {step}: {e}")))?;
            loss_sum += loss * m as f64;
            count += m;
            log.steps += 1;
        }
        log.epoch_loss.push(loss_sum / count as f64);
    }
    Ok(log)
}
