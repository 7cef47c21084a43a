//! CLI half of the acceptance suite: batch output must be byte-identical
//! regardless of worker-thread count.

use std::path::PathBuf;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_lanekit");

fn criterion(name: &str, pass: bool, detail: &str) {
    println!("[acceptance] {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

#[test]
fn criterion_12_thread_count_determinism() {
    let dir = std::env::temp_dir().join("lanekit_cli_tests").join("acceptance_threads");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let spec = dir.join("scene.cfg");
    std::fs::write(
        &spec,
        "h_m = 1.55\npitch_deg = 3\naperture_half_deg = 60\nrows = 375\ncols = 1242\n\
         frames = 5\nseed = 7\nnoise_sigma = 0.02\nroad_half_width_m = 6.0\n\
         forward_per_frame_m = 0.5\ndrift_per_frame_m = 0.003\n\
         lane = -5.25 0 0 0 0.15 1 0\nlane = -1.75 0 0 0 0.15 3 3\n\
         lane = 1.75 0 0 0 0.15 3 3\nlane = 5.25 0 0 0 0.15 1 0\n",
    )
    .unwrap();
    let data = dir.join("data");
    assert!(Command::new(BIN)
        .args(["synth"])
        .arg(&spec)
        .arg("-o")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let mut outputs: Vec<(usize, Vec<u8>)> = Vec::new();
    for threads in [1usize, 2, 8] {
        let out = Command::new(BIN)
            .args(["--threads", &threads.to_string(), "detect", "--seed", "7"])
            .arg(&data)
            .output()
            .unwrap();
        assert!(out.status.success());
        assert!(!out.stdout.is_empty());
        outputs.push((threads, out.stdout));
    }
    let reference: PathBuf = dir.join("threads1.jsonl");
    std::fs::write(&reference, &outputs[0].1).unwrap();
    let identical = outputs.iter().all(|(_, bytes)| bytes == &outputs[0].1);
    criterion(
        "criterion 12 thread-count determinism",
        identical,
        &format!(
            "detect over 5 frames, --threads 1/2/8: {} bytes each, byte-identical = {identical}",
            outputs[0].1.len()
        ),
    );
}
