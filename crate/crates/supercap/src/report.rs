//! Evaluation JSON, caption dumps and sweep tables.

use serde::{Deserialize, Serialize};
use supercap_core::trainer::MetricReport;

/// Fixed-schema evaluation report. METEOR and SPICE need external linguistic tools and
/// are reported as `"n/a"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJson {
    #[serde(rename = "BLEU-1")]
    pub bleu1: f64,
    #[serde(rename = "BLEU-2")]
    pub bleu2: f64,
    #[serde(rename = "BLEU-3")]
    pub bleu3: f64,
    #[serde(rename = "BLEU-4")]
    pub bleu4: f64,
    #[serde(rename = "ROUGE-L")]
    pub rouge_l: f64,
    #[serde(rename = "CIDEr")]
    pub cider: f64,
    #[serde(rename = "METEOR")]
    pub meteor: String,
    #[serde(rename = "SPICE")]
    pub spice: String,
}

impl From<&MetricReport> for EvalJson {
    fn from(r: &MetricReport) -> Self {
        Self {
            bleu1: r.bleu[0],
            bleu2: r.bleu[1],
            bleu3: r.bleu[2],
            bleu4: r.bleu[3],
            rouge_l: r.rouge_l,
            cider: r.cider,
            meteor: "n/a".into(),
            spice: "n/a".into(),
        }
    }
}

/// One generated caption in the COCO results layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
}

pub const SWEEP_HEADER: &str = "resolutions,global,BLEU-1,BLEU-2,BLEU-3,BLEU-4,ROUGE-L,CIDEr,run_dir";

pub fn sweep_row(resolutions: &[usize], global: bool, r: &MetricReport, run_dir: &str) -> String {
    let res: Vec<String> = resolutions.iter().map(ToString::to_string).collect();
    format!(
        "{},{},{},{},{},{},{},{},{}",
        res.join("+"),
        global,
        r.bleu[0],
        r.bleu[1],
        r.bleu[2],
        r.bleu[3],
        r.rouge_l,
        r.cider,
        run_dir
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_field_names() {
        let r = MetricReport { bleu: [1.0, 0.9, 0.8, 0.7], rouge_l: 0.5, cider: 2.0 };
        let v: serde_json::Value = serde_json::to_value(EvalJson::from(&r)).unwrap();
        assert_eq!(v["BLEU-4"], 0.7);
        assert_eq!(v["ROUGE-L"], 0.5);
        assert_eq!(v["CIDEr"], 2.0);
        assert_eq!(v["SPICE"], "n/a");
    }

    #[test]
    fn sweep_row_columns() {
        let r = MetricReport { bleu: [0.0; 4], rouge_l: 0.0, cider: 0.0 };
        let row = sweep_row(&[10, 25], true, &r, "runs/a");
        assert_eq!(row.split(',').count(), SWEEP_HEADER.split(',').count());
    }
}
