//! Viterbi decoding, the log partition function and posterior marginals on a
//! random chain, checked against exhaustive enumeration.

use deid::chain_crf::oracle::{brute_force_best, brute_force_log_z};
use deid::chain_crf::{log_partition, posterior_marginals, viterbi, TransitionMatrix};
use deid::numerics::{seeded_rng, Mat64};
use rand::Rng;

fn main() -> deid::Result<()> {
    let (n, k) = (5, 4);
    let mut rng = seeded_rng(3);
    let emissions: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let t = TransitionMatrix(Mat64::uniform(k, k, 1.0, &mut rng));

    let (path, score) = viterbi(&emissions, &t)?;
    let (bf_path, bf_score) = brute_force_best(&emissions, &t)?;
    println!("viterbi     {path:?} score {score:.6}");
    println!("enumeration {bf_path:?} score {bf_score:.6}");

    let log_z = log_partition(&emissions, &t)?;
    println!("log Z {log_z:.9} (enumeration {:.9})", brute_force_log_z(&emissions, &t)?);

    let (_, marg) = posterior_marginals(&emissions, &t)?;
    for (i, row) in marg.unary.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:.3}")).collect();
        println!("P(y_{i}) = [{}]", cells.join(", "));
    }
    Ok(())
}
