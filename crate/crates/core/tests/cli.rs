use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hslv(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hslv"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = hslv(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

const SMALL: &[&str] = &["--paths", "400", "--steps", "5,10", "--seed", "3"];

#[test]
fn market_surface_file_is_complete_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["market"], a.path());
    ok(&["market"], b.path());
    let text = read(a.path().join("surface.csv"));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,K,price"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 420);
    let price: f64 = rows[0].split(',').nth(2).unwrap().parse().unwrap();
    assert!(price > 0.0);
    assert_eq!(text, read(b.path().join("surface.csv")));
}

#[test]
fn tables_cover_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[&["tables"], SMALL].concat(), dir.path());
    for k in ["070", "100", "150"] {
        let text = read(dir.path().join(format!("table_K{k}.csv")));
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("scheme,N,K,err_pct,stderr_pct"));
        let rows: Vec<Vec<&str>> = lines
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').collect())
            .collect();
        assert_eq!(rows.len(), 8, "K{k}");
        for r in &rows {
            assert_eq!(r.len(), 5);
            let err: f64 = r[3].parse().unwrap();
            assert!(err >= 0.0);
            assert_eq!(r[3].split('.').nth(1).map(str::len), Some(4));
        }
        for scheme in ["Euler", "AES", "Truncated", "Backward"] {
            for n in ["5", "10"] {
                assert!(
                    rows.iter().any(|r| r[0] == scheme && r[1] == n),
                    "{scheme} N={n}"
                );
            }
        }
    }
}

#[test]
fn single_point_sweep_equals_table_cell() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--paths",
        "400",
        "--seed",
        "5",
        "--schemes",
        "backward,euler",
    ];
    ok(
        &[&["tables", "--steps", "25"], &args[..]].concat(),
        dir.path(),
    );
    ok(
        &[
            &["sweep", "p", "--sweep-grid", "0.25", "--sweep-steps", "25"],
            &args[..],
        ]
        .concat(),
        dir.path(),
    );
    let table = read(dir.path().join("table_K100.csv"));
    let sweep = read(dir.path().join("sweep_p.csv"));
    for scheme in ["Backward", "Euler"] {
        let cell = table
            .lines()
            .find(|l| l.starts_with(&format!("{scheme},25,")))
            .unwrap()
            .split(',')
            .skip(3)
            .collect::<Vec<_>>();
        let point = sweep
            .lines()
            .find(|l| {
                l.contains(&format!(",{scheme},"))
                    && l.split(',')
                        .nth(3)
                        .map(|k| k.parse::<f64>().unwrap() == 1.0)
                        .unwrap_or(false)
            })
            .unwrap()
            .split(',')
            .skip(4)
            .collect::<Vec<_>>();
        assert_eq!(cell, point, "{scheme}");
    }
}

#[test]
fn converge_writes_slope_line() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "converge",
            "--conv-schemes",
            "backward",
            "--conv-paths",
            "300",
            "--conv-levels",
            "8,16,32,64",
            "--conv-reference",
            "256",
        ],
        dir.path(),
    );
    let text = read(dir.path().join("converge_backward.csv"));
    assert!(text.starts_with("scheme,N,tau,l2_error,l1_error_V\n"));
    let slope: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("slope="))
        .expect("slope line")
        .parse()
        .unwrap();
    assert!(slope > 0.5 && slope < 1.5, "{slope}");
    assert_eq!(
        text.lines().filter(|l| l.starts_with("Backward,")).count(),
        4
    );
}

#[test]
fn condexp_dump_has_bins_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "condexp",
            "--condexp-paths",
            "2000",
            "--condexp-tau",
            "0.01",
            "--condexp-times",
            "0.5",
            "--condexp-oracle-paths",
            "4000",
            "--condexp-oracle-tau",
            "0.05",
            "--n-bins",
            "10",
        ],
        dir.path(),
    );
    for scheme in ["truncated", "backward"] {
        let text = read(dir.path().join(format!("condexp_{scheme}.csv")));
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.contains("bin_lo,bin_hi,mean_v"), "{header}");
        assert_eq!(lines.count(), 10);
    }
}

#[test]
fn unknown_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        hslv(&["market", "--bogus", "1"], dir.path()).status.code(),
        Some(2)
    );
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[market]\nkappa = 1.0\nvolatility = 2\n").unwrap();
    let o = hslv(&["market", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("volatility"));
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[model]\np = \"none\"\n\n[simulation]\nschemes = [\"aes\"]\npaths = 300\nsim_steps = 5\n",
    )
    .unwrap();
    ok(
        &[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--strikes",
            "1.0",
        ],
        dir.path(),
    );
    let text = read(dir.path().join("simulate.csv"));
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("AES,5,"));
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&[&["tables", "--threads", "1"], SMALL].concat(), a.path());
    ok(&[&["tables", "--threads", "3"], SMALL].concat(), b.path());
    for k in ["070", "100", "150"] {
        let name = format!("table_K{k}.csv");
        assert_eq!(read(a.path().join(&name)), read(b.path().join(&name)));
    }
    assert_eq!(
        read(a.path().join("trend_flags.csv")),
        read(b.path().join("trend_flags.csv"))
    );
}
