//! Finite-difference checks of each model block; every function returns the largest
//! relative error it saw.

use supercap_core::model::layers::{
    attention_head, decoder_forward, feed_forward, multi_head, route_on_tape, router_weights, DecoderLayer,
    DecoderParams, Init, RouterParams,
};
use supercap_core::model::{Captioner, Fusion, ModelInput};
use supercap_core::rng;
use supercap_core::tensor::{ParamStore, Reduction, Tape};
use supercap_core::text::PAD;

use super::{gradient_check, project, randomize, synthetic_features, tiny_config};

const D: usize = 8;

fn store_with(f: impl FnOnce(&mut Init<'_, f64>)) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let mut r = rng::seeded(11);
    f(&mut Init { store: &mut store, rng: &mut r });
    store
}

pub fn attention_head_block() -> f64 {
    let mut store = store_with(|i| {
        i.matrix("x", 3, D);
        i.matrix("keys", 4, D);
        i.matrix("wq", D, 4);
        i.matrix("wk", D, 4);
        i.matrix("wv", D, 4);
    });
    randomize(&mut store, 1, 1.0);
    let mut worst = 0.0f64;
    for causal in [false, true] {
        worst = worst.max(gradient_check(&mut store, |s, t| {
            let p = |t: &mut Tape<f64>, n: &str| t.param(s, s.id(n).unwrap());
            let (x, keys, wq, wk, wv) = (p(t, "x"), p(t, "keys"), p(t, "wq"), p(t, "wk"), p(t, "wv"));
            let keys = if causal { x } else { keys };
            let out = attention_head(t, x, keys, wq, wk, wv, causal).unwrap();
            project(t, out, 2)
        }));
    }
    worst
}

pub fn multi_head_block() -> f64 {
    let mut attn = None;
    let mut store = store_with(|i| {
        i.matrix("x", 3, D);
        i.matrix("memory", 5, D);
        attn = Some(i.attention("attn", D));
    });
    randomize(&mut store, 3, 0.8);
    let attn = attn.unwrap();
    let mut worst = 0.0f64;
    for (causal, cross) in [(false, false), (true, false), (false, true)] {
        worst = worst.max(gradient_check(&mut store, |s, t| {
            let x = t.param(s, s.id("x").unwrap());
            let keys = if cross { t.param(s, s.id("memory").unwrap()) } else { x };
            let out = multi_head(t, s, &attn, x, keys, 2, causal).unwrap();
            project(t, out, 4)
        }));
    }
    worst
}

pub fn feed_forward_block() -> f64 {
    let mut ffn = None;
    let mut store = store_with(|i| {
        i.matrix("x", 4, D);
        ffn = Some(i.feed_forward("ffn", D, 16));
    });
    randomize(&mut store, 5, 0.8);
    let ffn = ffn.unwrap();
    gradient_check(&mut store, |s, t| {
        let x = t.param(s, s.id("x").unwrap());
        let out = feed_forward(t, s, &ffn, x).unwrap();
        project(t, out, 6)
    })
}

pub fn embedding_block() -> f64 {
    let mut store = store_with(|i| {
        i.matrix("table", 6, D);
    });
    randomize(&mut store, 7, 1.0);
    gradient_check(&mut store, |s, t| {
        let table = t.param(s, s.id("table").unwrap());
        let out = t.embedding(table, &[1, 4, 4, 0, 5, 1]).unwrap();
        project(t, out, 8)
    })
}

pub fn cross_entropy_block() -> f64 {
    let mut store = store_with(|i| {
        i.matrix("logits", 5, 10);
    });
    randomize(&mut store, 9, 3.0);
    let mut worst = 0.0f64;
    for reduction in [Reduction::Mean, Reduction::Sum] {
        worst = worst.max(gradient_check(&mut store, |s, t| {
            let logits = t.param(s, s.id("logits").unwrap());
            t.cross_entropy(logits, &[3, PAD, 9, 1, 3], Some(PAD), reduction).unwrap()
        }));
    }
    worst
}

pub fn router_block() -> f64 {
    let mut router = None;
    let mut store = store_with(|i| {
        i.matrix("hidden", 4, D);
        i.matrix("expert0", 4, 7);
        i.matrix("expert1", 4, 7);
        i.matrix("expert2", 4, 7);
        router = Some(RouterParams { w: i.matrix("router.w", D, 3), b: i.constant("router.b", 3, 0.0) });
    });
    randomize(&mut store, 13, 1.5);
    let router = router.unwrap();
    gradient_check(&mut store, |s, t| {
        let hidden = t.param(s, s.id("hidden").unwrap());
        let weights = router_weights(t, s, &router, hidden).unwrap();
        let experts: Vec<_> = (0..3)
            .map(|e| {
                let logits = t.param(s, s.id(&format!("expert{e}")).unwrap());
                t.softmax_rows(logits)
            })
            .collect();
        let mixed = route_on_tape(t, &experts, weights).unwrap();
        t.nll(mixed, &[2, 6, PAD, 4], Some(PAD), Reduction::Mean).unwrap()
    })
}

pub fn decoder_block() -> f64 {
    let mut dec = None;
    let mut store = store_with(|i| {
        i.matrix("memory", 5, D);
        dec = Some(DecoderParams {
            embed: i.matrix("embed", 9, D),
            layers: vec![DecoderLayer {
                self_attn: i.attention("self", D),
                cross_attn: i.attention("cross", D),
                ffn: i.feed_forward("ffn", D, 16),
            }],
            out_w: i.matrix("out_w", D, 9),
            out_b: i.constant("out_b", 9, 0.0),
        });
    });
    randomize(&mut store, 17, 0.7);
    let dec = dec.unwrap();
    gradient_check(&mut store, |s, t| {
        let memory = t.param(s, s.id("memory").unwrap());
        let (_, logits) = decoder_forward(t, s, &dec, 2, memory, &[1, 5, 7, 3]).unwrap();
        t.cross_entropy(logits, &[5, 7, 3, 2], Some(PAD), Reduction::Mean).unwrap()
    })
}

/// The full captioner loss for one fusion method.
pub fn whole_model(fusion: Fusion) -> f64 {
    let features = synthetic_features(D, &[(2, 2), (3, 3)], 21);
    let cfg = tiny_config(fusion, vec![2, 3], 9);
    let mut model = Captioner::<f64>::new(cfg.clone(), 5).unwrap();
    randomize(model.params_mut(), 23, 0.5);
    let input = ModelInput::from_features(&features, &cfg).unwrap();
    let mut store = model.params().clone();
    gradient_check(&mut store, |s, t| {
        let m = Captioner::from_params(cfg.clone(), s).unwrap();
        let fused = m.fuse(t, &input).unwrap();
        m.sequence_loss(t, &fused, &[1, 4, 6, 8, 2], Reduction::Mean).unwrap()
    })
}

/// Every block by name.
pub fn all() -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = vec![
        ("attention head".into(), attention_head_block()),
        ("multi-head+residual+norm".into(), multi_head_block()),
        ("feed-forward".into(), feed_forward_block()),
        ("embedding".into(), embedding_block()),
        ("cross-entropy".into(), cross_entropy_block()),
        ("router".into(), router_block()),
        ("decoder stack".into(), decoder_block()),
    ];
    for f in Fusion::ALL {
        out.push((format!("model {}", f.flag()), whole_model(f)));
    }
    out
}
