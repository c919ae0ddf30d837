mod common;

use common::*;
use hima_core::blocks::{Block, BlockType, Leb, Mesa, Pdb, Ss2d};
use hima_core::freq::FreqConfig;
use hima_core::loda::{Loda, LodaConfig};
use hima_core::net::{LevelPriors, Mpf, PriorSet};
use hima_core::params::Init;

const TOL: f64 = 1e-4;

#[test]
fn leb_gradients() {
    let (m, mut s) = build(1, |b| Leb::new(b, "leb", 3, Init::Zero));
    s.randomize(&mut rng(2), 0.4);
    let x = uniform(&[1, 3, 6, 5], -1.0, 1.0, 3);
    let r = gradcheck(&s, &x, None, 24, |bd, v| m.forward(bd, v));
    assert!(r.overall <= TOL, "{r:?}");
}

#[test]
fn mesa_gradients_including_metadata_and_temperature() {
    let (m, mut s) = build(4, |b| Mesa::new(b, "m", 4, true));
    s.randomize(&mut rng(5), 0.4);
    let x = uniform(&[1, 4, 5, 4], -1.0, 1.0, 6);
    let r = gradcheck(&s, &x, None, 24, |bd, v| m.forward(bd, v));
    assert!(r.overall <= TOL, "{r:?}");
    let names = s.names();
    let meta = names.iter().position(|n| n == "m.meta").unwrap();
    let temp = names.iter().position(|n| n == "m.temperature").unwrap();
    assert!(r.per_input[1 + meta] <= TOL && r.per_input[1 + temp] <= TOL);
}

#[test]
fn ss2d_gradients() {
    let (m, mut s) = build(7, |b| Ss2d::new(b, "s", 4));
    s.randomize(&mut rng(8), 0.4);
    let x = uniform(&[1, 4, 3, 4], -1.0, 1.0, 9);
    let r = gradcheck(&s, &x, None, 24, |bd, v| m.forward(bd, v));
    assert!(r.overall <= TOL, "{r:?}");
}

#[test]
fn lsb_ssb_and_spatial_block_gradients() {
    for kind in [BlockType::Lsb, BlockType::Ssb, BlockType::SpatialAttention] {
        let (m, mut s) = build(10, |b| Block::new(b, "blk", kind, 4, true));
        s.randomize(&mut rng(11), 0.3);
        let x = uniform(&[1, 4, 4, 5], -1.0, 1.0, 12);
        let r = gradcheck(&s, &x, None, 16, |bd, v| m.forward(bd, v));
        assert!(r.overall <= TOL, "{kind:?} {r:?}");
    }
}

#[test]
fn pdb_gradients() {
    let (m, mut s) = build(13, |b| Pdb::new(b, "pdb", 4, 6, 2));
    s.randomize(&mut rng(14), 0.3);
    let x = uniform(&[1, 4, 5, 6], 0.0, 1.0, 15);
    let r = gradcheck(&s, &x, None, 16, |bd, v| m.forward(bd, v));
    assert!(r.overall <= TOL, "{r:?}");
}

#[test]
fn loda_gradients() {
    let cfg = LodaConfig {
        patch_sizes: vec![2, 4],
        epsilon: 1e-5,
    };
    let (m, mut s) = build(16, |b| Loda::new(b, "loda", 4, &cfg));
    s.randomize(&mut rng(17), 0.3);
    let x = uniform(&[1, 4, 8, 6], 0.05, 1.0, 18);
    let r = gradcheck(&s, &x, None, 24, |bd, v| m.forward(bd, v));
    assert!(r.overall <= TOL, "{r:?}");
}

#[test]
fn mpf_gradients_all_inputs() {
    let set = PriorSet {
        aligned: true,
        rhat: true,
        hf: true,
    };
    let freq = FreqConfig {
        threshold: 0.25,
        min_low_halfwidth: 0,
    };
    let (m, mut s) = build(19, |b| Mpf::new(b, "mpf", 3, set, freq));
    s.randomize(&mut rng(20), 0.4);
    // x, y and the three priors stacked along the batch axis
    let stacked = uniform(&[5, 3, 8, 8], -1.0, 1.0, 21);
    let r = gradcheck(&s, &stacked, None, 24, |bd, v| {
        let parts = v.chunk(5, 0)?;
        m.forward(
            bd,
            parts[0],
            parts[1],
            LevelPriors {
                aligned: Some(parts[2]),
                rhat: Some(parts[3]),
                hf: Some(parts[4]),
            },
        )
    });
    assert!(r.overall <= TOL, "{r:?}");
}
