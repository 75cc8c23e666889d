use speechbridge::corpus::{generate_corpus, SynthSpec};
use speechbridge::s2p::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("ctc0");
    match which {
        "ctc0" => {
            // zero-noise quick convergence
            let mut s = SynthSpec::with_defaults(77).unwrap();
            s.noise_sigma = 0.0;
            s.sentence_len_min = 2; s.sentence_len_max = 4;
            let corpus = generate_corpus(&s, 60).unwrap();
            let (train, dev) = corpus.split_at(50);
            let mode = TargetMode::Mono { inventory: s.inventory().unwrap() };
            for lr in [0.01, 0.02, 0.05, 0.1] {
                let hyper = TrainHyper { epochs: 20, batch_size: 8, lr, seed: 9 };
                let t = Instant::now();
                let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
                println!("lr={lr}: dev_per={:?} best={} ({:.1?})", &out.dev_per[out.dev_per.len().min(6)-6..], out.dev_per.iter().copied().fold(f64::INFINITY, f64::min), t.elapsed());
            }
        }
        "ctc3" => {
            // noise 0.3, realistic size
            let s = SynthSpec::with_defaults(17).unwrap();
            let n: usize = args.get(2).map(|x| x.parse().unwrap()).unwrap_or(600);
            let corpus = generate_corpus(&s, n + 100).unwrap();
            let (train, dev) = corpus.split_at(n);
            let mode = TargetMode::Mono { inventory: s.inventory().unwrap() };
            for lr in [0.02, 0.05] {
                for epochs in [8] {
                    let hyper = TrainHyper { epochs, batch_size: 8, lr, seed: 17 };
                    let t = Instant::now();
                    let out = train_ctc(None, train, dev, &mode, &hyper, false).unwrap();
                    println!("lr={lr} ep={epochs}: per_curve={:?} ({:.1?})", out.dev_per, t.elapsed());
                }
            }
        }
        "recon" => {
            let mut s = SynthSpec::with_defaults(31).unwrap();
            s.noise_sigma = 0.0;
            s.sentence_len_min = 2; s.sentence_len_max = 4;
            let corpus = generate_corpus(&s, 30).unwrap();
            for lr in [0.05, 0.1, 0.2] {
                for epochs in [15] {
                    let hyper = TrainHyper { epochs, batch_size: 4, lr, seed: 4 };
                    let t = Instant::now();
                    let (_e, curve) = pretrain_reconstruction(&corpus, EncoderConfig::default(), &hyper).unwrap();
                    let mono = curve.windows(2).all(|w| w[1] <= w[0] + 1e-9);
                    println!("lr={lr} ep={epochs}: final={:.4} monotone={mono} ({:.1?})", curve.last().unwrap(), t.elapsed());
                }
            }
        }
        _ => eprintln!("unknown"),
    }
}
