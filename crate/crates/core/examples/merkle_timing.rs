//! Merkle construction time against token count and embedding width, with
//! a linear fit per width. Pass `--csv` to print the raw table instead.

use tokenaudit::harness::{bench_merkle, linear_fit, write_timing_csv};

fn main() -> tokenaudit::Result<()> {
    let tokens = [1000, 2000, 4000, 8000, 16000];
    let dims = [128, 384, 768];
    let rows = bench_merkle(&tokens, &dims, 5, 42)?;
    if std::env::args().any(|a| a == "--csv") {
        return write_timing_csv(std::io::stdout(), &rows);
    }
    for d in dims {
        let per_dim: Vec<_> = rows.iter().filter(|r| r.dim == d).collect();
        let xs: Vec<f64> = per_dim.iter().map(|r| r.tokens as f64).collect();
        let ys: Vec<f64> = per_dim.iter().map(|r| r.median_secs).collect();
        let (slope, _, r2) = linear_fit(&xs, &ys).expect("several points");
        let medians: Vec<String> = per_dim.iter().map(|r| format!("{:.1}", r.median_secs * 1e3)).collect();
        println!(
            "d = {d:>3}: median ms {}  ({:.2} µs/token, R² {r2:.4})",
            medians.join(" / "),
            slope * 1e6
        );
    }
    Ok(())
}
