//! Browser bindings for the `thc` crate. Every export returns a JSON string
//! so the page needs no generated type glue.

use serde::Serialize;
use thc::cluster_eval::{lloyd, louvain, purity, Partition};
use thc::data::{generate, PlantedSpec};
use thc::train::{finalize_assignment, run_training, split, TrainConfig};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
pub struct Heatmap {
    pub nodes: usize,
    pub label: usize,
    /// Row-major `nodes × nodes` connectivity of one sample.
    pub values: Vec<f64>,
    pub fine: Vec<usize>,
    pub coarse: Vec<usize>,
}

#[derive(Serialize)]
pub struct Baselines {
    pub lloyd: Vec<usize>,
    pub lloyd_purity: f64,
    pub louvain: Vec<usize>,
    pub louvain_purity: f64,
    pub louvain_modularity: f64,
}

#[derive(Serialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub loss: f64,
    pub val_auroc: f64,
}

#[derive(Serialize)]
pub struct TrainSummary {
    pub history: Vec<EpochPoint>,
    pub test_auroc: f64,
    pub test_acc: f64,
    /// Node-level cluster of every node after each layer.
    pub clusters: Vec<Vec<usize>>,
    pub fine_purity: f64,
}

fn spec(nodes: usize, noise: f64, seed: u64) -> PlantedSpec {
    PlantedSpec {
        nodes,
        noise,
        seed,
        ..PlantedSpec::default()
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serialises")
}

pub fn heatmap(nodes: usize, noise: f64, seed: u64) -> Result<Heatmap, String> {
    let s = spec(nodes, noise, seed);
    let d = generate(&s, 2).map_err(|e| e.to_string())?;
    let t = s.truth();
    let g = &d.graphs[0];
    Ok(Heatmap {
        nodes,
        label: g.label,
        values: g.adjacency.data().to_vec(),
        fine: t.fine,
        coarse: t.coarse,
    })
}

pub fn baselines(nodes: usize, noise: f64, samples: usize, seed: u64) -> Result<Baselines, String> {
    let s = spec(nodes, noise, seed);
    let d = generate(&s, samples).map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..d.len()).collect();
    let mean = d.mean_adjacency(&all);
    let fine = Partition::new(&s.fine_labels());
    let km = lloyd(&mean, s.fine_blocks, seed).map_err(|e| e.to_string())?;
    let lv = louvain(&mean, seed).map_err(|e| e.to_string())?;
    Ok(Baselines {
        lloyd_purity: purity(&km.partition, &fine).map_err(|e| e.to_string())?,
        lloyd: km.partition.labels().to_vec(),
        louvain_purity: purity(&lv.partition, &fine).map_err(|e| e.to_string())?,
        louvain: lv.partition.labels().to_vec(),
        louvain_modularity: lv.modularity,
    })
}

/// A deliberately small model on a small planted dataset, so a few epochs
/// finish in the browser.
pub fn train_tiny(epochs: usize, shift: f64, seed: u64) -> Result<TrainSummary, String> {
    let s = PlantedSpec {
        nodes: 24,
        class_shift: shift,
        seed,
        ..PlantedSpec::default()
    };
    let d = generate(&s, 80).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::default();
    cfg.model.schedule = vec![6, 3];
    cfg.model.heads = 2;
    cfg.model.key_dim = 8;
    cfg.model.value_dim = 8;
    cfg.model.readout_hidden = 16;
    cfg.optimizer.learning_rate = 1e-3;
    cfg.run.epochs = epochs;
    cfg.run.seed = seed;
    let splits = split(&d.labels(), cfg.run.split, seed).map_err(|e| e.to_string())?;
    let out = run_training(&cfg, &d.graphs, splits, |_| Ok(())).map_err(|e| e.to_string())?;
    let inputs: Vec<_> = out.splits.train.iter().map(|&i| &d.graphs[i].adjacency).collect();
    let fa = finalize_assignment(&out.state.model, &inputs).map_err(|e| e.to_string())?;
    let fine = Partition::new(&s.fine_labels());
    Ok(TrainSummary {
        history: out
            .state
            .history
            .iter()
            .map(|m| EpochPoint {
                epoch: m.epoch,
                loss: m.total,
                val_auroc: m.val_auroc,
            })
            .collect(),
        test_auroc: out.test.test_auroc,
        test_acc: out.test.test_acc,
        fine_purity: purity(&Partition::new(&fa.node_hard[0]), &fine).map_err(|e| e.to_string())?,
        clusters: fa.node_hard,
    })
}

#[wasm_bindgen(js_name = plantedHeatmap)]
pub fn planted_heatmap(nodes: usize, noise: f64, seed: u32) -> Result<String, JsValue> {
    heatmap(nodes, noise, seed.into()).map(|h| to_json(&h)).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = clusterBaselines)]
pub fn cluster_baselines(nodes: usize, noise: f64, samples: usize, seed: u32) -> Result<String, JsValue> {
    baselines(nodes, noise, samples, seed.into())
        .map(|b| to_json(&b))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = trainTiny)]
pub fn train_tiny_js(epochs: usize, shift: f64, seed: u32) -> Result<String, JsValue> {
    train_tiny(epochs, shift, seed.into())
        .map(|t| to_json(&t))
        .map_err(|e| JsValue::from_str(&e))
}
