//! Generate a small synthetic corpus plus a manifest, so training and
//! evaluation run with no external data.
//!
//! ```text
//! cargo run --release -p maskcomp --example make_corpus -- OUTDIR [utterances] [seconds]
//! ```
//!
//! Writes `clean_NNN.wav`, `noise_NNN.wav`, and `corpus.tsv` with train
//! entries at 0 dB and test entries over {-3, 0, 3, 6} dB.

use std::path::PathBuf;

use maskcomp::data::{speech_like, synth_noise, write_wav, NoiseKind};
use maskcomp::dsp::SAMPLE_RATE;

fn main() {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| {
        eprintln!("usage: make_corpus OUTDIR [utterances] [seconds]");
        std::process::exit(2);
    }));
    let count: usize = args.next().map(|s| s.parse().expect("utterance count")).unwrap_or(4);
    let seconds: f64 = args.next().map(|s| s.parse().expect("seconds")).unwrap_or(2.0);

    std::fs::create_dir_all(&out).expect("create output directory");
    let len = (seconds * SAMPLE_RATE as f64) as usize;
    let test_snrs = [-3.0, 0.0, 3.0, 6.0];

    let mut manifest = String::from("# split\tsnr_db\tseed\tclean\tnoise\n");
    for i in 0..count {
        let clean = speech_like::<f64>(len, 1000 + i as u64);
        let kind = if i % 2 == 0 { NoiseKind::White } else { NoiseKind::Babble };
        let noise = synth_noise::<f64>(kind, len + SAMPLE_RATE as usize / 2, 2000 + i as u64);
        let c = format!("clean_{i:03}.wav");
        let n = format!("noise_{i:03}.wav");
        write_wav(&out.join(&c), &clean).expect("write clean");
        write_wav(&out.join(&n), &noise).expect("write noise");
        manifest.push_str(&format!("train\t0\t{}\t{c}\t{n}\n", 10 + i));
        manifest.push_str(&format!(
            "test\t{}\t{}\t{c}\t{n}\n",
            test_snrs[i % test_snrs.len()],
            50 + i
        ));
    }
    std::fs::write(out.join("corpus.tsv"), manifest).expect("write manifest");
    println!("wrote {count} utterance pairs and corpus.tsv under {}", out.display());
}
