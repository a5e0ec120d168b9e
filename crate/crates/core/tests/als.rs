mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use texgraph::als::{fit, total_loss, update_entity_factor, update_relation_factor, SubsetIndex};
use texgraph::synth::{coupled_instance, random_binary_blocks};
use texgraph::{BlockKey, BlockMap, DenseMatrix, FactorSet, InitMode, TrainConfig};

/// Rows of the least-squares problem for row `i` of `A_n`: one equation per
/// cell of every block in which type `n` occurs, other factors as given.
/// Diagonal blocks contribute both their mode-1 and mode-2 fibers with the
/// other occurrence held at `factors.entity[n]`.
fn entity_row_system(n: usize, i: usize, blocks: &BlockMap, factors: &FactorSet) -> (DMatrix<f64>, DVector<f64>) {
    let f = factors.rank();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for (key, x) in blocks {
        let c = &factors.relation[key];
        let (ni, nj, nk) = x.dims();
        if key.n == n {
            let other = &factors.entity[key.m];
            for k in 0..nk {
                for j in 0..ni {
                    rows.push((0..f).map(|p| other[(j, p)] * c[(k, p)]).collect());
                    rhs.push(x.get(j, i, k));
                }
            }
        }
        if key.m == n {
            let other = &factors.entity[key.n];
            for k in 0..nk {
                for j in 0..nj {
                    rows.push((0..f).map(|p| other[(j, p)] * c[(k, p)]).collect());
                    rhs.push(x.get(i, j, k));
                }
            }
        }
    }
    let design = DMatrix::from_fn(rows.len(), f, |r, p| rows[r][p]);
    (design, DVector::from_vec(rhs))
}

fn dense_entity_update(n: usize, blocks: &BlockMap, factors: &FactorSet) -> DMatrix<f64> {
    let rows = factors.entity[n].rows();
    let mut out = DMatrix::zeros(rows, factors.rank());
    for i in 0..rows {
        let (d, t) = entity_row_system(n, i, blocks, factors);
        out.set_row(i, &lstsq(&d, &t).transpose());
    }
    out
}

fn dense_relation_update(key: BlockKey, blocks: &BlockMap, factors: &FactorSet) -> DMatrix<f64> {
    let x = &blocks[&key];
    let (a, b) = (&factors.entity[key.m], &factors.entity[key.n]);
    let design = khatri_rao(b, a);
    let x3 = unfold(x, 2);
    let mut out = DMatrix::zeros(x.dims().2, factors.rank());
    for k in 0..x.dims().2 {
        let t = x3.row(k).transpose();
        out.set_row(k, &lstsq(&design, &t).transpose());
    }
    out
}

#[test]
fn entity_update_recovers_truth_with_other_factors_fixed() {
    let s = coupled_instance(&[6, 7, 5], &[(0, 1, 3), (1, 2, 2), (0, 2, 2)], 3, 4).unwrap();
    let subsets = SubsetIndex::new(3, &s.blocks);
    for n in 0..3 {
        let mut start = s.truth.clone();
        start.entity[n] = uniform(&mut rng(n as u64), start.entity[n].rows(), 3);
        let got = update_entity_factor(n, &s.blocks, &subsets, &start, 0.0).unwrap();
        assert!(rel_err(&got, &na(&s.truth.entity[n])) < 1e-10, "type {n}");
    }
}

#[test]
fn entity_update_matches_dense_least_squares() {
    let mut r = rng(21);
    let blocks = random_binary_blocks(&[6, 8, 5], &[(0, 1, 3), (1, 2, 2), (0, 2, 1)], 0.4, 2).unwrap();
    let factors = FactorSet::new(
        2,
        vec![uniform(&mut r, 6, 2), uniform(&mut r, 8, 2), uniform(&mut r, 5, 2)],
        blocks
            .iter()
            .map(|(k, b)| (*k, uniform(&mut r, b.dims().2, 2)))
            .collect(),
    )
    .unwrap();
    let subsets = SubsetIndex::new(3, &blocks);
    for n in 0..3 {
        let got = update_entity_factor(n, &blocks, &subsets, &factors, 0.0).unwrap();
        assert!(
            rel_err(&got, &dense_entity_update(n, &blocks, &factors)) < 1e-10,
            "type {n}"
        );
    }
}

#[test]
fn diagonal_block_update_is_frozen_least_squares() {
    let mut r = rng(8);
    let blocks = random_binary_blocks(&[7, 4], &[(0, 0, 2), (0, 1, 2)], 0.4, 5).unwrap();
    let factors = FactorSet::new(
        2,
        vec![uniform(&mut r, 7, 2), uniform(&mut r, 4, 2)],
        blocks
            .iter()
            .map(|(k, b)| (*k, uniform(&mut r, b.dims().2, 2)))
            .collect(),
    )
    .unwrap();
    let subsets = SubsetIndex::new(2, &blocks);
    let got = update_entity_factor(0, &blocks, &subsets, &factors, 0.0).unwrap();
    assert!(rel_err(&got, &dense_entity_update(0, &blocks, &factors)) < 1e-10);
}

#[test]
fn relation_update_matches_dense_least_squares() {
    let s = coupled_instance(&[6, 7, 5], &[(0, 0, 2), (0, 1, 3), (1, 2, 1)], 3, 6).unwrap();
    let mut r = rng(1);
    let noisy = FactorSet::new(
        3,
        s.truth.entity.iter().map(|a| uniform(&mut r, a.rows(), 3)).collect(),
        s.truth.relation.clone(),
    )
    .unwrap();
    for key in s.blocks.keys() {
        let got = update_relation_factor(*key, &s.blocks, &noisy, 0.0).unwrap();
        assert!(
            rel_err(&got, &dense_relation_update(*key, &s.blocks, &noisy)) < 1e-10,
            "{key}"
        );
        let exact = update_relation_factor(*key, &s.blocks, &s.truth, 0.0).unwrap();
        assert!(rel_err(&exact, &na(&s.truth.relation[key])) < 1e-10, "{key}");
    }
}

#[test]
fn orthonormal_factors_give_mode3_product() {
    let q = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) as f64).sin()).qr().q();
    let a = DenseMatrix::from_fn(5, 2, |i, j| q[(i, j)]);
    let b = DenseMatrix::from_fn(5, 2, |i, j| q[(i, j + 2)]);
    let mut r = rng(2);
    let x = random_binary(&mut r, 5, 5, 3, 0.5);
    let blocks: BlockMap = [(BlockKey { m: 0, n: 1 }, x.clone())].into_iter().collect();
    let factors = FactorSet::new(
        2,
        vec![a.clone(), b.clone()],
        [(BlockKey { m: 0, n: 1 }, DenseMatrix::zeros(3, 2))]
            .into_iter()
            .collect(),
    )
    .unwrap();
    let got = update_relation_factor(BlockKey { m: 0, n: 1 }, &blocks, &factors, 0.0).unwrap();
    let want = dense_mttkrp(&x, 2, &a, &b, &DenseMatrix::zeros(3, 2));
    assert!(rel_err(&got, &want) < 1e-12);
}

#[test]
fn total_loss_matches_dense_evaluation() {
    let mut r = rng(4);
    let blocks = random_binary_blocks(&[5, 6], &[(0, 0, 2), (0, 1, 3)], 0.3, 7).unwrap();
    let factors = FactorSet::new(
        3,
        vec![uniform(&mut r, 5, 3), uniform(&mut r, 6, 3)],
        blocks
            .iter()
            .map(|(k, b)| (*k, uniform(&mut r, b.dims().2, 3)))
            .collect(),
    )
    .unwrap();
    let ridge = 0.25;
    let want = dense_loss(&blocks, &factors) + ridge * factors.norm_sq();
    let got = total_loss(&blocks, &factors, ridge).unwrap();
    assert!((got - want).abs() < 1e-10 * want);
}

#[test]
fn exact_data_loss_is_zero_and_zero_factors_give_data_norm() {
    let s = coupled_instance(&[4, 6], &[(0, 0, 2), (0, 1, 2)], 2, 3).unwrap();
    assert!(total_loss(&s.blocks, &s.truth, 0.0).unwrap().abs() < 1e-9);
    let zero = zero_factors(&[4, 6], &s.blocks, 2);
    let norm = data_norm(&s.blocks);
    assert!((total_loss(&s.blocks, &zero, 0.0).unwrap() - norm).abs() < 1e-12 * norm);
}

#[test]
fn exact_recovery_from_random_start() {
    let sizes = [30, 40, 25];
    let s = coupled_instance(&sizes, &[(0, 0, 3), (0, 1, 4), (1, 2, 2), (0, 2, 2)], 5, 0).unwrap();
    let config = TrainConfig {
        rank: 5,
        max_sweeps: 200,
        ridge: 1e-8,
        seed: 1,
        init: InitMode::Random,
        ..Default::default()
    };
    let init = FactorSet::random(&sizes, &s.blocks, 5, 1).unwrap();
    let out = fit(&s.blocks, &config, init).unwrap();
    let fit_err = (dense_loss(&s.blocks, &out.factors) / data_norm(&s.blocks)).sqrt();
    assert!(fit_err < 1e-6, "relative fit error {fit_err:e}");
}
