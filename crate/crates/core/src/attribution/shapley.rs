use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ReferenceSpec, Target};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Real, Tensor};

/// Largest player count accepted by [`exact_shapley`] (2ⁿ evaluations).
pub const EXACT_SHAPLEY_CAP: usize = 20;

/// Largest player count accepted by [`shapley_by_permutations`] (n! orderings).
pub const PERMUTATION_ORACLE_CAP: usize = 8;

/// A cooperative game over `players()` players. Coalitions are bit masks:
/// bit `i` set means player `i` is present.
pub trait Game {
    fn players(&self) -> usize;
    fn value(&self, coalition: u32) -> f64;
}

/// A game defined by a closure.
pub struct FnGame<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(u32) -> f64> Game for FnGame<F> {
    fn players(&self) -> usize {
        self.n
    }

    fn value(&self, coalition: u32) -> f64 {
        (self.f)(coalition)
    }
}

// Compensated summation; the oracles compare at 1e-12.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

fn all_values<G: Game + ?Sized>(game: &G) -> Vec<f64> {
    (0..1u32 << game.players()).map(|s| game.value(s)).collect()
}

/// Shapley values by direct enumeration:
/// `Shᵢ = Σ_{S ⊆ N∖{i}} (n−s−1)!·s!/n! · (v(S∪{i}) − v(S))`.
///
/// `positions` restricts which players are reported (all when `None`); the
/// game itself is evaluated once per coalition.
pub fn exact_shapley<G: Game + ?Sized>(game: &G, positions: Option<&[usize]>) -> Result<Vec<f64>> {
    let n = game.players();
    if n > EXACT_SHAPLEY_CAP {
        return Err(Error::TooManyPlayers {
            players: n,
            cap: EXACT_SHAPLEY_CAP,
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let positions = positions.unwrap_or(&all);
    if let Some(&bad) = positions.iter().find(|&&i| i >= n) {
        return Err(Error::Shape(format!("player {bad} out of range for {n} players")));
    }
    let v = all_values(game);
    let n_fact = factorial(n) as f64;
    let weights: Vec<f64> = (0..n)
        .map(|s| (factorial(n - s - 1) * factorial(s)) as f64 / n_fact)
        .collect();
    Ok(positions
        .iter()
        .map(|&i| {
            let bit = 1u32 << i;
            let mut acc = Neumaier::default();
            for s in 0..1u32 << n {
                if s & bit == 0 {
                    acc.add(weights[s.count_ones() as usize] * (v[(s | bit) as usize] - v[s as usize]));
                }
            }
            acc.total()
        })
        .collect())
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Shapley values as the average marginal contribution over all n!
/// orderings of the players.
pub fn shapley_by_permutations<G: Game + ?Sized>(game: &G) -> Result<Vec<f64>> {
    let n = game.players();
    if n > PERMUTATION_ORACLE_CAP {
        return Err(Error::TooManyPlayers {
            players: n,
            cap: PERMUTATION_ORACLE_CAP,
        });
    }
    let v = all_values(game);
    let mut sums: Vec<Neumaier> = (0..n).map(|_| Neumaier::default()).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut count = 0u64;
    loop {
        let mut s = 0u32;
        for &i in &perm {
            let with = s | (1 << i);
            sums[i].add(v[with as usize] - v[s as usize]);
            s = with;
        }
        count += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(sums.iter().map(|a| a.total() / count as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledShapley {
    pub values: Vec<f64>,
    /// Standard error of each mean marginal contribution.
    pub std_errors: Vec<f64>,
    pub permutations: usize,
}

/// Monte-Carlo Shapley values from `permutations` uniformly random orderings.
pub fn sampled_shapley<G: Game + ?Sized>(game: &G, permutations: usize, seed: u64) -> Result<SampledShapley> {
    if permutations == 0 {
        return Err(Error::Config("sampled Shapley needs at least one permutation".into()));
    }
    let n = game.players();
    if n > 32 {
        return Err(Error::TooManyPlayers { players: n, cap: 32 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    let empty = game.value(0);
    for k in 1..=permutations {
        perm.shuffle(&mut rng);
        let mut s = 0u32;
        let mut prev = empty;
        for &i in &perm {
            s |= 1 << i;
            let cur = game.value(s);
            let x = cur - prev;
            let delta = x - mean[i];
            mean[i] += delta / k as f64;
            m2[i] += delta * (x - mean[i]);
            prev = cur;
        }
    }
    let std_errors = m2
        .iter()
        .map(|&m| {
            if permutations > 1 {
                (m / (permutations - 1) as f64 / permutations as f64).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(SampledShapley {
        values: mean,
        std_errors,
        permutations,
    })
}

/// The model as a game over token positions: positions outside the
/// coalition carry the reference embedding. Positions that are not players
/// keep their actual embedding.
pub struct EmbeddingGame<'a, T> {
    model: &'a Model<T>,
    actual: Tensor<T>,
    reference: Vec<T>,
    players: Vec<usize>,
    target: Target,
}

impl<'a, T: Real> EmbeddingGame<'a, T> {
    pub fn new(
        model: &'a Model<T>,
        actual: Tensor<T>,
        reference: &ReferenceSpec,
        players: Vec<usize>,
        target: Target,
    ) -> Result<Self> {
        let cfg = &model.config;
        if actual.shape() != [cfg.max_len, cfg.embed_dim] {
            return Err(Error::Shape(format!("embedded input {:?}", actual.shape())));
        }
        if reference.vector.len() != cfg.embed_dim {
            return Err(Error::Shape("reference width differs from embedding width".into()));
        }
        if players.len() > 32 || players.iter().any(|&p| p >= cfg.max_len) {
            return Err(Error::Shape("players must be at most 32 distinct positions".into()));
        }
        Ok(EmbeddingGame {
            model,
            actual,
            reference: reference.vector.iter().map(|&x| T::lit(x)).collect(),
            players,
            target,
        })
    }

    /// Every position is a player.
    pub fn all_positions(model: &'a Model<T>, actual: Tensor<T>, reference: &ReferenceSpec, target: Target) -> Result<Self> {
        let players = (0..model.config.max_len).collect();
        Self::new(model, actual, reference, players, target)
    }

    pub fn player_positions(&self) -> &[usize] {
        &self.players
    }
}

impl<T: Real> Game for EmbeddingGame<'_, T> {
    fn players(&self) -> usize {
        self.players.len()
    }

    fn value(&self, coalition: u32) -> f64 {
        let mut x = self.actual.clone();
        for (i, &pos) in self.players.iter().enumerate() {
            if coalition & (1 << i) == 0 {
                x.row_mut(pos).copy_from_slice(&self.reference);
            }
        }
        let cache = self.model.forward_embedded(x).expect("shapes checked at construction");
        self.target.of(&cache).as_f64()
    }
}
