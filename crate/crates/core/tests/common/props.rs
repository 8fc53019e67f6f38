//! Invariant checks over a single cohort. Shared by the proptest suite and
//! the acceptance runner.

use multiend_core::data::{read_trial_csv, write_trial_csv};
use multiend_core::global_u::endpoint_u;
use multiend_core::rank::rank_matrix;
use multiend_core::{
    compare_pair, fs_test, global_u_test, multirank_test, obrien_test, pairwise_score_vector, win_ratio_test,
    ColumnMapping, EndpointSpec, Inference, OutcomeValue, PermutationPlan, RankVariance, TestResult, Verdict, WinRatio,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{close, oracle, Cohort, Row, BIN, CONT, SURV};

pub type PropResult = Result<(), TestCaseError>;

fn exact() -> Inference {
    Inference::Permutation(PermutationPlan::exact())
}

fn asym() -> Inference {
    Inference::Asymptotic
}

fn all_asymptotic(c: &Cohort) -> Vec<TestResult> {
    let ds = c.dataset();
    let h = Cohort::specs();
    let names = Cohort::names();
    vec![
        obrien_test(&ds, &names, RankVariance::Adjusted, asym()).unwrap(),
        fs_test(&ds, &h, asym()).unwrap(),
        win_ratio_test(&ds, &h, asym()).unwrap().to_test_result(),
        multirank_test(&ds, &names, asym()).unwrap(),
        global_u_test(&ds, &Cohort::kernels(), asym()).unwrap(),
    ]
}

/// Every method's asymptotic statistic (and variance where closed-form)
/// and exact permutation p against the brute-force oracle.
pub fn oracle_agreement(c: &Cohort) -> PropResult {
    let ds = c.dataset();
    let h = Cohort::specs();
    let names = Cohort::names();
    let cc = c.complete();
    let tol = 1e-12;

    let fs = fs_test(&ds, &h, asym()).unwrap();
    let fs_x = fs_test(&ds, &h, exact()).unwrap();
    prop_assert_eq!(fs.statistic, oracle::fs_stat(c));
    prop_assert!(close(fs.variance, oracle::fs_variance(c), tol));
    prop_assert_eq!(fs_x.p_two_sided, oracle::exact_p(c, oracle::fs_stat));

    let wr = win_ratio_test(&ds, &h, asym()).unwrap();
    let wr_x = win_ratio_test(&ds, &h, exact()).unwrap();
    let (w, l, t) = oracle::tally(c);
    prop_assert_eq!((wr.n_wins, wr.n_losses, wr.n_ties), (w, l, t));
    if w > 0 && l > 0 {
        prop_assert!(close(wr.log_wr.unwrap(), oracle::log_wr(c), tol));
        match (wr.se_log_wr, oracle::jackknife_se(c)) {
            (Some(a), Some(b)) => prop_assert!(close(a, b, 1e-10), "jackknife {a} vs {b}"),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
    }
    prop_assert_eq!(wr_x.p_two_sided, oracle::exact_p(c, oracle::log_wr));

    let rs = obrien_test(&ds, &names, RankVariance::Adjusted, asym()).unwrap();
    let rs_x = obrien_test(&ds, &names, RankVariance::Adjusted, exact()).unwrap();
    prop_assert!(close(rs.statistic, oracle::obrien_stat(&cc), tol));
    let welch = oracle::obrien_welch_variance(&cc);
    if welch > 0.0 {
        prop_assert!(close(rs.variance, welch, tol));
    }
    prop_assert_eq!(rs_x.p_two_sided, oracle::exact_p(&cc, oracle::obrien_stat));

    let mr = multirank_test(&ds, &names, asym()).unwrap();
    let mr_x = multirank_test(&ds, &names, exact()).unwrap();
    let (t_or, rank_or) = oracle::multirank_stat(&cc);
    prop_assert_eq!(mr.metadata["df"].parse::<usize>().unwrap(), rank_or);
    prop_assert!(close(mr.statistic, t_or, 1e-9), "multirank {} vs {}", mr.statistic, t_or);
    if rank_or > 0 {
        prop_assert_eq!(mr_x.p_two_sided, oracle::exact_p(&cc, |x| oracle::multirank_stat(x).0));
    }

    let gu = global_u_test(&ds, &Cohort::kernels(), asym()).unwrap();
    let gu_x = global_u_test(&ds, &Cohort::kernels(), exact()).unwrap();
    let wts = Cohort::KERNEL_WEIGHTS;
    prop_assert!(close(gu.statistic, oracle::global_u(c, &wts), tol));
    prop_assert!(close(gu.variance, oracle::global_u_variance(c, &wts), tol));
    prop_assert_eq!(gu_x.p_two_sided, oracle::exact_p(c, |x| oracle::global_u(x, &wts)));
    Ok(())
}

/// compare_pair is antisymmetric, reflexive, and agrees with the oracle
/// verdict and deciding level.
pub fn kernel_antisymmetry(c: &Cohort) -> PropResult {
    let ds = c.dataset();
    let h = Cohort::specs();
    let s = ds.subjects();
    for i in 0..s.len() {
        let own = compare_pair(&s[i], &s[i], &h).unwrap();
        prop_assert_eq!(own.verdict, Verdict::Tie);
        prop_assert_eq!(own.decided_at_level, None);
        for j in 0..s.len() {
            let ab = compare_pair(&s[i], &s[j], &h).unwrap();
            let ba = compare_pair(&s[j], &s[i], &h).unwrap();
            prop_assert_eq!(ab.verdict.score(), -ba.verdict.score());
            prop_assert_eq!(ab.decided_at_level, ba.decided_at_level);
            prop_assert_eq!(ab.verdict == Verdict::Tie, ab.decided_at_level.is_none());
            let (v, level) = oracle::verdict(&c.rows[i], &c.rows[j]);
            prop_assert_eq!(i64::from(ab.verdict.score()), v);
            prop_assert_eq!(ab.decided_at_level, level);
        }
    }
    Ok(())
}

/// Σu = 0 and the score vector matches exhaustive recomputation.
pub fn score_identity(c: &Cohort) -> PropResult {
    let u = pairwise_score_vector(&c.dataset(), &Cohort::specs()).unwrap();
    prop_assert_eq!(u.iter().sum::<i64>(), 0);
    prop_assert_eq!(u, oracle::scores(c));
    Ok(())
}

/// W + L + T = n₁n₀ and the win count equals the number of treatment ×
/// control pairs compare_pair calls a win.
pub fn partition_identity(c: &Cohort) -> PropResult {
    let ds = c.dataset();
    let h = Cohort::specs();
    let wr = win_ratio_test(&ds, &h, asym()).unwrap();
    prop_assert_eq!(wr.n_wins + wr.n_losses + wr.n_ties, (c.n1() * c.n0()) as u64);
    let s = ds.subjects();
    let (mut w, mut l) = (0u64, 0u64);
    for a in s.iter().filter(|x| x.group.is_treatment()) {
        for b in s.iter().filter(|x| !x.group.is_treatment()) {
            match compare_pair(a, b, &h).unwrap().verdict {
                Verdict::Win => w += 1,
                Verdict::Loss => l += 1,
                Verdict::Tie => {}
            }
        }
    }
    prop_assert_eq!((wr.n_wins, wr.n_losses), (w, l));
    if l > 0 {
        prop_assert_eq!(wr.win_ratio, WinRatio::Finite(w as f64 / l as f64));
    }
    Ok(())
}

/// Swapping labels negates FS, O'Brien and global U, inverts WR, keeps
/// the multirank statistic, and leaves every p-value unchanged.
pub fn label_swap(c: &Cohort) -> PropResult {
    let sw = c.swapped();
    let (a, b) = (all_asymptotic(c), all_asymptotic(&sw));
    for (x, y) in a.iter().zip(&b) {
        prop_assert!(close(x.p_two_sided, y.p_two_sided, 1e-9), "{}: {} vs {}", x.method, x.p_two_sided, y.p_two_sided);
    }
    prop_assert!(close(a[0].statistic, -b[0].statistic, 1e-12));
    prop_assert_eq!(a[1].statistic, -b[1].statistic);
    prop_assert!(close(a[3].statistic, b[3].statistic, 1e-9));
    prop_assert!(close(a[4].statistic, -b[4].statistic, 1e-12));

    let h = Cohort::specs();
    let (wa, wb) = (
        win_ratio_test(&c.dataset(), &h, asym()).unwrap(),
        win_ratio_test(&sw.dataset(), &h, asym()).unwrap(),
    );
    prop_assert_eq!((wa.n_wins, wa.n_losses), (wb.n_losses, wb.n_wins));
    if let (WinRatio::Finite(x), WinRatio::Finite(y)) = (wa.win_ratio, wb.win_ratio) {
        if x > 0.0 {
            prop_assert!(close(x, 1.0 / y, 1e-12));
        }
    }

    let (ds, dsw) = (c.dataset(), sw.dataset());
    let names = Cohort::names();
    let pairs = [
        (fs_test(&ds, &h, exact()).unwrap(), fs_test(&dsw, &h, exact()).unwrap()),
        (
            win_ratio_test(&ds, &h, exact()).unwrap().to_test_result(),
            win_ratio_test(&dsw, &h, exact()).unwrap().to_test_result(),
        ),
        (
            obrien_test(&ds, &names, RankVariance::Naive, exact()).unwrap(),
            obrien_test(&dsw, &names, RankVariance::Naive, exact()).unwrap(),
        ),
        (multirank_test(&ds, &names, exact()).unwrap(), multirank_test(&dsw, &names, exact()).unwrap()),
        (
            global_u_test(&ds, &Cohort::kernels(), exact()).unwrap(),
            global_u_test(&dsw, &Cohort::kernels(), exact()).unwrap(),
        ),
    ];
    for (x, y) in &pairs {
        prop_assert_eq!(x.p_two_sided, y.p_two_sided, "{}", x.method);
    }
    Ok(())
}

fn transformed(c: &Cohort) -> Cohort {
    Cohort {
        rows: c
            .rows
            .iter()
            .map(|r| Row {
                time: r.time * r.time + 3.0,
                cont: r.cont.map(|x| x * x * x + x - 40.0),
                ..r.clone()
            })
            .collect(),
    }
}

/// Strictly increasing maps of the survival times and the continuous
/// endpoint change no rank or pairwise statistic.
pub fn monotone_invariance(c: &Cohort) -> PropResult {
    let a = all_asymptotic(c);
    let b = all_asymptotic(&transformed(c));
    for (x, y) in a.iter().zip(&b) {
        prop_assert_eq!(x.statistic.to_bits(), y.statistic.to_bits(), "{}", x.method);
        prop_assert_eq!(x.p_two_sided.to_bits(), y.p_two_sided.to_bits(), "{}", x.method);
    }
    Ok(())
}

/// Midranks lie in [1, N] and every column sums to N(N+1)/2.
pub fn midrank_identity(c: &Cohort) -> PropResult {
    let rm = rank_matrix(&c.dataset(), &Cohort::names()).unwrap();
    let n = rm.n() as f64;
    for s in rm.column_sums() {
        prop_assert_eq!(s, n * (n + 1.0) / 2.0);
    }
    prop_assert!(rm.ranks.iter().all(|&r| (1.0..=n).contains(&r)));
    let expected = oracle::rank_columns(&c.complete());
    for (k, col) in expected.iter().enumerate() {
        for (i, &r) in col.iter().enumerate() {
            prop_assert_eq!(rm.ranks[(i, k)], r);
        }
    }
    Ok(())
}

/// Once a pair is decided at level k, lower-priority values are ignored.
pub fn level_monotonicity(c: &Cohort, seed: u64) -> PropResult {
    let ds = c.dataset();
    let h = Cohort::specs();
    let s = ds.subjects();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alternatives = [
        OutcomeValue::Continuous(None),
        OutcomeValue::Continuous(Some(-1e9)),
        OutcomeValue::Continuous(Some(1e9)),
    ];
    for i in 0..s.len() {
        for j in 0..s.len() {
            let before = compare_pair(&s[i], &s[j], &h).unwrap();
            let Some(level) = before.decided_at_level else { continue };
            let (mut a, mut b) = (s[i].clone(), s[j].clone());
            if level < 2 {
                a.outcomes.insert(CONT.into(), alternatives.choose(&mut rng).unwrap().clone());
                b.outcomes.insert(CONT.into(), alternatives.choose(&mut rng).unwrap().clone());
            }
            if level < 3 {
                a.outcomes.insert(BIN.into(), OutcomeValue::Binary(Some(true)));
                b.outcomes.insert(BIN.into(), OutcomeValue::Binary(Some(false)));
            }
            prop_assert_eq!(compare_pair(&a, &b, &h).unwrap(), before);
        }
    }
    Ok(())
}

/// Turning an observed event into censoring at the same day never makes
/// the survival comparison favour that subject where it did not before.
pub fn censoring_soundness(c: &Cohort) -> PropResult {
    let ds = c.dataset();
    let h = vec![EndpointSpec::time_to_event(SURV, 1)];
    let s = ds.subjects();
    for a in s {
        let OutcomeValue::TimeToEvent { time, event_observed: true } = a.outcomes[SURV] else {
            continue;
        };
        let mut censored = a.clone();
        censored.outcomes.insert(
            SURV.into(),
            OutcomeValue::TimeToEvent {
                time,
                event_observed: false,
            },
        );
        for b in s {
            let before = compare_pair(a, b, &h).unwrap().verdict;
            let after = compare_pair(&censored, b, &h).unwrap().verdict;
            if after == Verdict::Win {
                prop_assert_eq!(before, Verdict::Win);
            }
        }
    }
    Ok(())
}

/// Reordering subjects changes no result.
pub fn order_invariance(c: &Cohort, seed: u64) -> PropResult {
    let mut rows = c.rows.clone();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let shuffled = Cohort { rows };
    for (x, y) in all_asymptotic(c).iter().zip(&all_asymptotic(&shuffled)) {
        prop_assert!(close(x.statistic, y.statistic, 1e-9), "{}", x.method);
        prop_assert!(close(x.p_two_sided, y.p_two_sided, 1e-9), "{}", x.method);
    }
    Ok(())
}

fn permutation_results(c: &Cohort, seed: u64) -> Vec<TestResult> {
    let ds = c.dataset();
    let h = Cohort::specs();
    let names = Cohort::names();
    let plan = Inference::Permutation(PermutationPlan::monte_carlo(300, seed));
    vec![
        obrien_test(&ds, &names, RankVariance::Adjusted, plan).unwrap(),
        fs_test(&ds, &h, plan).unwrap(),
        win_ratio_test(&ds, &h, plan).unwrap().to_test_result(),
        multirank_test(&ds, &names, plan).unwrap(),
        global_u_test(&ds, &Cohort::kernels(), plan).unwrap(),
    ]
}

/// Monte Carlo results are identical across repeated runs and across
/// worker pools of different sizes.
pub fn worker_determinism(c: &Cohort, seed: u64) -> PropResult {
    let pool = |k: usize| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
    let one = pool(1).install(|| permutation_results(c, seed));
    let eight = pool(8).install(|| permutation_results(c, seed));
    prop_assert_eq!(&one, &eight);
    prop_assert_eq!(&one, &permutation_results(c, seed));
    Ok(())
}

/// Endpoint and global U lie in [−1, 1]; moving weight between kernels
/// moves U by at most the moved share times the largest |U_k|.
pub fn global_u_bounds(c: &Cohort) -> PropResult {
    let ds = c.dataset();
    let kernels = Cohort::kernels();
    let parts: Vec<f64> = kernels.iter().map(|k| endpoint_u(&ds, k).unwrap().u).collect();
    prop_assert!(parts.iter().all(|u| (-1.0..=1.0).contains(u)));
    let g = global_u_test(&ds, &kernels, asym()).unwrap().statistic;
    prop_assert!((-1.0..=1.0).contains(&g));
    let max_u = parts.iter().fold(0.0f64, |m, u| m.max(u.abs()));
    let eps = 0.05;
    let mut nudged = kernels.clone();
    let total: f64 = kernels.iter().map(|k| k.weight).sum();
    nudged[0].weight -= eps * total;
    nudged[1].weight += eps * total;
    let g2 = global_u_test(&ds, &nudged, asym()).unwrap().statistic;
    prop_assert!((g - g2).abs() <= 2.0 * eps * max_u + 1e-12);
    Ok(())
}

/// Writing a dataset to CSV and reading it back is lossless.
pub fn csv_round_trip(c: &Cohort) -> PropResult {
    let ds = c.dataset();
    let mapping = ColumnMapping::for_dataset(&ds).unwrap();
    let mut buf = Vec::new();
    write_trial_csv(&ds, &mapping, &mut buf).unwrap();
    let back = read_trial_csv(buf.as_slice(), &mapping).unwrap();
    prop_assert_eq!(back, ds);
    Ok(())
}
