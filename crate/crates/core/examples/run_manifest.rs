//! Drive the command pipeline from code: run `synth` at a fixed point into a
//! temporary directory and check the manifest against the files on disk.

use clap::Parser;
use robust_smoother::cli::{execute, Cli};
use robust_smoother::io::sha256_hex;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("robust-smoother-manifest-example");
    let cfg = dir.join("fixed.cfg");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(&cfg, "[delay]\nrealization = \"printed\"\n[synthesis]\nlambda = [0.9727, 0.4831, 0.0015, 0.0014]\noptimize = false\n")?;

    let cli = Cli::try_parse_from(["robust-smoother", "synth", "--config", cfg.to_str().unwrap(), "--out-dir", dir.join("out").to_str().unwrap()])?;
    let outcome = execute(&cli)?;
    println!("{}", outcome.summary);
    for a in &outcome.manifest.artifacts {
        let on_disk = sha256_hex(&std::fs::read(dir.join("out").join(&a.file))?);
        println!("{} {} {}", a.file, a.sha256, if on_disk == a.sha256 { "ok" } else { "CHANGED" });
    }
    Ok(())
}
