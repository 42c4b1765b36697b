use std::collections::BTreeSet;

use nalgebra::DMatrix;
use proptest::prelude::*;

use carleson_lab::carleson::{
    check_g_domination, embedding_constant, scalar_cet_ratio, stopping_time,
    testing_constant_matrix,
};
use carleson_lab::experiments::{
    random_carleson, random_matrix_sequence, random_vector_fn, random_weight, seeded_rng,
    stopping_structure_holds,
};
use carleson_lab::io;
use carleson_lab::maximal::{check_domination, maximal_aux, maximal_mw};
use carleson_lab::seqspaces::{check_sest, omega_decomposition, pairing, s_norm, t_norm};
use carleson_lab::sparse::{
    apply_sparse, generate_sparse, is_sparse, packing_constant, sparse_children,
    sparse_weighted_norm,
};
use carleson_lab::weights::spd_power;
use carleson_lab::{
    CarlesonSequence, DyadicIndex, DyadicTree, GridVectorFn, MatrixSequence, MatrixWeight,
    SparseFamily, SparseStrategy, SpdMatrix,
};

fn index_strategy(max_level: u32) -> impl Strategy<Value = DyadicIndex> {
    (0..=max_level)
        .prop_flat_map(|k| (Just(k), 0..(1u64 << k)))
        .prop_map(|(k, p)| DyadicIndex::new(k, p).unwrap())
}

fn strategy_of(k: u8) -> SparseStrategy {
    [
        SparseStrategy::Chain,
        SparseStrategy::Random,
        SparseStrategy::GreedyMaximal,
    ][k as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn children_partition_parent(i in index_strategy(20)) {
        let tree = DyadicTree::new(21).unwrap();
        let (l, r) = tree.children(&i).unwrap();
        prop_assert_eq!(l.parent(), Some(i));
        prop_assert_eq!(r.parent(), Some(i));
        prop_assert_eq!(l.left(), i.left());
        prop_assert_eq!(r.right(), i.right());
        prop_assert_eq!(l.right(), r.left());
        prop_assert_eq!(l.measure() + r.measure(), i.measure());
        prop_assert!(l.is_disjoint(&r));
    }

    #[test]
    fn ancestor_chain_is_nested(i in index_strategy(30)) {
        let tree = DyadicTree::new(30).unwrap();
        let chain = tree.ancestors(&i).unwrap();
        prop_assert_eq!(chain.len() as u32, i.level() + 1);
        prop_assert_eq!(chain[0], DyadicIndex::ROOT);
        prop_assert_eq!(*chain.last().unwrap(), i);
        for w in chain.windows(2) {
            prop_assert!(w[0].strictly_contains(&w[1]));
            prop_assert_eq!(w[1].measure() * 2.0, w[0].measure());
        }
    }

    #[test]
    fn index_string_and_flat_round_trip(i in index_strategy(25)) {
        let s = i.to_string();
        prop_assert_eq!(s.parse::<DyadicIndex>().unwrap(), i);
        prop_assert_eq!(DyadicIndex::from_flat(i.flat()), i);
        let json = serde_json::to_string(&i).unwrap();
        prop_assert_eq!(json, format!("\"{}\"", i));
    }

    #[test]
    fn spd_square_root_multiplies_back(seed in any::<u64>(), dim in 1usize..5) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, 0, dim).unwrap();
        let m = SpdMatrix::new(w.cell(0).clone()).unwrap();
        let r = spd_power(&m, 0.5).unwrap();
        let back = r.as_matrix() * r.as_matrix();
        let scale = m.as_matrix().amax();
        prop_assert!((back - m.as_matrix()).amax() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn averages_match_direct_sums(seed in any::<u64>(), depth in 0u32..6, dim in 1usize..4) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, depth, dim).unwrap();
        let tower = w.averages();
        for i in w.tree().intervals() {
            let range = w.tree().cell_range(&i);
            let n = range.len() as f64;
            let direct = range.fold(DMatrix::zeros(dim, dim), |acc, c| acc + w.cell(c)) / n;
            let scale = direct.amax();
            prop_assert!((&tower[i.flat()] - &direct).amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn a2_is_at_least_one_and_inverse_invariant(seed in any::<u64>(), depth in 0u32..6, dim in 1usize..4) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, depth, dim).unwrap();
        let a2 = w.a2_characteristic().unwrap();
        let a2_inv = w.inverse().unwrap().a2_characteristic().unwrap();
        prop_assert!(a2 >= 1.0 - 1e-10);
        prop_assert!((a2 - a2_inv).abs() <= 1e-8 * a2);
        for v in w.contraction_profile().unwrap() {
            prop_assert!(v <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn inverse_is_an_involution(seed in any::<u64>(), depth in 0u32..5, dim in 1usize..4) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, depth, dim).unwrap();
        let back = w.inverse().unwrap().inverse().unwrap();
        for (a, b) in w.cells().iter().zip(back.cells()) {
            let cond = {
                let e = a.clone().symmetric_eigen().eigenvalues;
                e.max() / e.min()
            };
            prop_assert!((a - b).amax() <= 1e-15 * cond * a.amax().max(1.0));
        }
    }

    #[test]
    fn maximal_domination_and_homogeneity(seed in any::<u64>(), depth in 0u32..6, dim in 1usize..4, c in -5.0f64..5.0) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, depth, dim).unwrap();
        let f = random_vector_fn(&mut rng, depth, dim).unwrap();
        prop_assert!(check_domination(&w, &f).unwrap() <= 1e-10 * maximal_aux(&w.inverse().unwrap(), &f).unwrap().max().max(1.0));
        let m = maximal_mw(&w, &f).unwrap();
        let mc = maximal_mw(&w, &f.scaled(c)).unwrap();
        for (a, b) in m.cells().iter().zip(mc.cells()) {
            prop_assert!((b - c.abs() * a).abs() <= 1e-12 * a.max(1.0) * c.abs().max(1.0));
        }
    }

    #[test]
    fn carleson_ordering(seed in any::<u64>(), depth in 0u32..5, dim in 1usize..4) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, depth, dim).unwrap();
        let a = random_carleson(&mut rng, depth, dim).unwrap();
        let c1 = embedding_constant(&w, &a).unwrap();
        prop_assert!(testing_constant_matrix(&w, &a).unwrap() <= c1 + 1e-9 * c1.max(1.0));
    }

    #[test]
    fn scalar_ratio_within_four(seed in any::<u64>(), depth in 0u32..7) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, depth, 1).unwrap();
        let a = random_carleson(&mut rng, depth, 1).unwrap();
        let r = scalar_cet_ratio(&w, &a).unwrap();
        prop_assert!((1.0 - 1e-9..=4.0 + 1e-9).contains(&r));
    }

    #[test]
    fn stopping_time_bounds(seed in any::<u64>(), depth in 0u32..7, dim in 1usize..4) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, depth, dim).unwrap();
        let f = random_vector_fn(&mut rng, depth, dim).unwrap();
        prop_assert!(check_g_domination(&w, &f).unwrap() <= 4.0 + 1e-9);
        prop_assert!(stopping_structure_holds(&stopping_time(&w, &f).unwrap(), w.tree()));
    }

    #[test]
    fn sequence_space_estimates(seed in any::<u64>(), depth in 0u32..7, dim in 1usize..4) {
        let mut rng = seeded_rng(seed, 0);
        let s = random_matrix_sequence(&mut rng, depth, dim).unwrap();
        prop_assert!(check_sest(&s) <= 1.0 + 1e-9);
        let dec = omega_decomposition(&s);
        for (i, m) in s.entries() {
            if m.iter().any(|&x| x != 0.0) {
                prop_assert_eq!(dec.band_of(i).len(), 1);
            }
        }
        let t = random_matrix_sequence(&mut rng, depth, dim).unwrap();
        let fro = |x: &MatrixSequence| x.entries().values().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        prop_assert!(pairing(&s, &t).unwrap().abs() <= fro(&s) * fro(&t) * (1.0 + 1e-12));
        prop_assert!(s_norm(&s) >= 0.0 && t_norm(&t) >= 0.0);
    }

    #[test]
    fn generated_families_are_sparse(depth in 0u32..12, seed in any::<u64>(), k in 0u8..3) {
        let fam = generate_sparse(depth, strategy_of(k), seed).unwrap();
        prop_assert!(is_sparse(fam.members()).sparse);
        prop_assert!(packing_constant(&fam) <= 2.0 + 1e-12);
        for i in fam.members() {
            let ch = sparse_children(&fam, i).unwrap();
            let mass: f64 = ch.iter().map(|j| j.measure()).sum();
            prop_assert!(mass <= 0.5 * i.measure());
        }
    }

    #[test]
    fn sparse_operator_is_linear(seed in any::<u64>(), depth in 0u32..6, dim in 1usize..3, k in 0u8..3, c in -3.0f64..3.0) {
        let mut rng = seeded_rng(seed, 0);
        let fam = generate_sparse(depth, strategy_of(k), seed).unwrap();
        let f = random_vector_fn(&mut rng, depth, dim).unwrap();
        let g = random_vector_fn(&mut rng, depth, dim).unwrap();
        let lhs = apply_sparse(&fam, &f.scaled(c).try_add(&g).unwrap()).unwrap();
        let rhs = apply_sparse(&fam, &f).unwrap().scaled(c).try_add(&apply_sparse(&fam, &g).unwrap()).unwrap();
        let scale = lhs.cells().iter().map(|v| v.amax()).fold(1.0, f64::max);
        for (a, b) in lhs.cells().iter().zip(rhs.cells()) {
            prop_assert!((a - b).amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn sparse_norm_bounds_every_input(seed in any::<u64>(), depth in 0u32..5, dim in 1usize..3, k in 0u8..3) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, depth, dim).unwrap();
        let fam = generate_sparse(depth, strategy_of(k), seed).unwrap();
        let norm = sparse_weighted_norm(&fam, &w).unwrap().value;
        for _ in 0..5 {
            let f = random_vector_fn(&mut rng, depth, dim).unwrap();
            let nf = w.weighted_l2_norm(&f).unwrap();
            if nf > 0.0 {
                let sf = w.weighted_l2_norm(&apply_sparse(&fam, &f).unwrap()).unwrap();
                prop_assert!(sf <= norm * nf * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn weight_json_round_trip_is_bit_exact(seed in any::<u64>(), depth in 0u32..5, dim in 1usize..4) {
        let mut rng = seeded_rng(seed, 0);
        let w = random_weight(&mut rng, depth, dim).unwrap();
        let text = serde_json::to_string(&w.to_file()).unwrap();
        let back = MatrixWeight::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
        for (a, b) in w.cells().iter().zip(back.cells()) {
            prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn sequence_json_round_trip(seed in any::<u64>(), depth in 0u32..5, dim in 1usize..4) {
        let mut rng = seeded_rng(seed, 0);
        let a = random_carleson(&mut rng, depth, dim).unwrap();
        let text = serde_json::to_string(&a.to_file()).unwrap();
        prop_assert_eq!(CarlesonSequence::from_file(&serde_json::from_str(&text).unwrap()).unwrap(), a);
        let s = random_matrix_sequence(&mut rng, depth, dim).unwrap();
        let text = serde_json::to_string(&s.to_file()).unwrap();
        prop_assert_eq!(MatrixSequence::from_file(&serde_json::from_str(&text).unwrap()).unwrap(), s);
        let f = random_vector_fn(&mut rng, depth, dim).unwrap();
        let text = serde_json::to_string(&f.to_file()).unwrap();
        prop_assert_eq!(GridVectorFn::from_file(&serde_json::from_str(&text).unwrap()).unwrap(), f);
    }

    #[test]
    fn family_json_round_trip(depth in 0u32..10, seed in any::<u64>(), k in 0u8..3) {
        let fam = generate_sparse(depth, strategy_of(k), seed).unwrap();
        let text = serde_json::to_string(&fam.to_file()).unwrap();
        prop_assert_eq!(SparseFamily::from_file(&serde_json::from_str(&text).unwrap()).unwrap(), fam);
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded_rng(77, 0);
    let w = random_weight(&mut rng, 4, 2).unwrap();
    let p = dir.path().join("nested/w.json");
    io::save_weight(&p, &w).unwrap();
    assert_eq!(io::load_weight(&p).unwrap(), w);

    let fam = generate_sparse(4, SparseStrategy::Random, 3).unwrap();
    let p = dir.path().join("f.json");
    io::save_sparse_family(&p, &fam).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.contains("\"members\""));
    assert!(text.contains("\"0:0\""));
    assert_eq!(io::load_sparse_family(&p).unwrap(), fam);

    let a = random_carleson(&mut rng, 4, 2).unwrap();
    let p = dir.path().join("a.json");
    io::save_carleson(&p, &a).unwrap();
    assert_eq!(io::load_carleson(&p).unwrap(), a);
}

#[test]
fn weight_file_layout() {
    let w = MatrixWeight::new(
        1,
        2,
        vec![
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]),
        ],
    )
    .unwrap();
    let v: serde_json::Value = serde_json::to_value(w.to_file()).unwrap();
    assert_eq!(v["depth"], 1);
    assert_eq!(v["dim"], 2);
    assert_eq!(v["cells"][0], serde_json::json!([2.0, 0.5, 0.5, 1.0]));
    assert_eq!(v["cells"][1], serde_json::json!([1.0, 0.0, 0.0, 3.0]));
}

#[test]
fn malformed_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"depth":1,"dim":1,"cells":[[1.0],[-1.0]]}"#).unwrap();
    assert!(matches!(
        io::load_weight(&bad),
        Err(carleson_lab::LabError::NotSpd(_))
    ));
    std::fs::write(&bad, r#"{"depth":1,"dim":1,"cells":[[1.0]]}"#).unwrap();
    assert!(io::load_weight(&bad).is_err());
    std::fs::write(&bad, "{not json").unwrap();
    let err = io::load_weight(&bad).unwrap_err();
    assert!(err.to_string().contains("bad.json"));
    let missing = dir.path().join("missing.json");
    assert!(io::load_weight(&missing)
        .unwrap_err()
        .to_string()
        .contains("missing.json"));
    std::fs::write(&bad, r#"{"depth":2,"members":["0:0","1:0","1:1"]}"#).unwrap();
    assert!(io::load_sparse_family(&bad).is_err());
    std::fs::write(&bad, r#"{"depth":2,"members":["3:0"]}"#).unwrap();
    assert!(io::load_sparse_family(&bad).is_err());
    let members: BTreeSet<DyadicIndex> =
        ["0:0", "2:1"].iter().map(|s| s.parse().unwrap()).collect();
    assert!(SparseFamily::new(2, members).is_ok());
}
