//! Parameter counts beside the published reference values.

use serde::{Deserialize, Serialize};

use crate::config::{Aggregation, FusionStrategy, Modality, ModalitySet, ModelConfig, ModelKind};
use crate::error::Result;
use crate::fusion::Network;

/// Context block with its classification head, encoder excluded.
pub fn published_context(agg: Aggregation) -> usize {
    match agg {
        Aggregation::Gap => 270_338,
        Aggregation::Ws => 270_341,
        Aggregation::Conv1d => 466_946,
    }
}

/// Feature block by input streams; `None` for subsets that were not reported.
pub fn published_feature(mods: ModalitySet) -> Option<usize> {
    if mods == ModalitySet::all() {
        return Some(184_978);
    }
    match mods.iter().collect::<Vec<_>>()[..] {
        [Modality::Body] => Some(32_634),
        [Modality::Head] => Some(21_370),
        [Modality::Hand] => Some(19_450),
        _ => None,
    }
}

/// Assembled network.
pub fn published_drivernet(agg: Aggregation, fusion: FusionStrategy) -> usize {
    use Aggregation::*;
    use FusionStrategy::*;
    match (agg, fusion) {
        (Gap, Cf) => 2_536_592,
        (Gap, Af) => 447_152,
        (Gap, Caf) => 1_036_976,
        (Ws, Cf) => 2_536_595,
        (Ws, Af) => 447_155,
        (Ws, Caf) => 1_036_979,
        (Conv1d, Cf) => 2_741_394,
        (Conv1d, Af) => 651_954,
        (Conv1d, Caf) => 1_241_778,
    }
}

/// Published per-clip inference cost in milliseconds.
pub fn published_cost_ms(agg: Aggregation, fusion: FusionStrategy) -> u32 {
    use Aggregation::*;
    use FusionStrategy::*;
    match (agg, fusion) {
        (Gap | Ws, Cf) => 52,
        (Gap | Ws, Af) => 22,
        (Gap | Ws, Caf) => 35,
        (Conv1d, Cf) => 62,
        (Conv1d, Af) => 24,
        (Conv1d, Caf) => 37,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRow {
    pub item: String,
    pub ours: i64,
    pub paper: Option<i64>,
}

impl AuditRow {
    fn new(item: impl Into<String>, ours: usize, paper: Option<usize>) -> Self {
        Self {
            item: item.into(),
            ours: ours as i64,
            paper: paper.map(|p| p as i64),
        }
    }

    fn delta(item: impl Into<String>, ours: i64, paper: Option<i64>) -> Self {
        Self {
            item: item.into(),
            ours,
            paper,
        }
    }

    /// `"MATCH"`, `"MISMATCH"`, or `"-"` when there is no reference.
    pub fn flag(&self) -> &'static str {
        match self.paper {
            Some(p) if p == self.ours => "MATCH",
            Some(_) => "MISMATCH",
            None => "-",
        }
    }
}

/// True when every width matches the published architecture, so its
/// counts are comparable.
pub fn has_paper_dims(cfg: &ModelConfig) -> bool {
    let p = ModelConfig::paper();
    cfg.views == p.views
        && cfg.frames == p.frames
        && cfg.channels == p.channels
        && cfg.encoder_channels == p.encoder_channels
        && cfg.d_model == p.d_model
        && cfg.context_heads == p.context_heads
        && cfg.conv_kernel == p.conv_kernel
        && cfg.fcl_dims == p.fcl_dims
        && cfg.gru_dims == p.gru_dims
        && cfg.feature_heads == p.feature_heads
        && cfg.head_hidden == p.head_hidden
}

fn trainable(cfg: &ModelConfig) -> Result<usize> {
    Ok(Network::new(cfg.clone())?.count_parameters().trainable)
}

/// Count rows for `cfg`: per-block totals, the assembled total, and the
/// aggregation and fusion deltas. Reference values appear only when the
/// widths are the published ones.
pub fn audit(cfg: &ModelConfig) -> Result<Vec<AuditRow>> {
    let refs = has_paper_dims(cfg);
    let net = Network::new(cfg.clone())?;
    let count = net.count_parameters();
    let with_agg = |a: Aggregation| trainable(&cfg.clone().with_aggregation(a));
    let with_fusion = |f: FusionStrategy| trainable(&cfg.clone().with_fusion(f));
    let mut rows = vec![AuditRow::new("visual encoder (excluded)", count.encoder, None)];
    match cfg.kind {
        ModelKind::Context => {
            rows.push(AuditRow::new(
                format!("context block, {}", cfg.aggregation),
                count.trainable,
                refs.then(|| published_context(cfg.aggregation)),
            ));
            let gap = with_agg(Aggregation::Gap)? as i64;
            rows.push(AuditRow::delta("WS - GAP", with_agg(Aggregation::Ws)? as i64 - gap, refs.then_some(3)));
            rows.push(AuditRow::delta(
                "Conv1D - GAP",
                with_agg(Aggregation::Conv1d)? as i64 - gap,
                refs.then_some(196_608),
            ));
        }
        ModelKind::Feature => {
            let names: Vec<&str> = cfg.modalities.iter().map(Modality::as_str).collect();
            rows.push(AuditRow::new(
                format!("feature block, {}", names.join("+")),
                count.trainable,
                published_feature(cfg.modalities).filter(|_| refs),
            ));
        }
        ModelKind::DriverNet => {
            rows.push(AuditRow::new("context block without head", count.context, None));
            rows.push(AuditRow::new("feature block without head", count.feature, None));
            rows.push(AuditRow::new(format!("fusion block, {}", cfg.fusion), count.fusion, None));
            rows.push(AuditRow::new(
                format!("assembled, {} {}", cfg.aggregation, cfg.fusion),
                count.trainable,
                refs.then(|| published_drivernet(cfg.aggregation, cfg.fusion)),
            ));
            let gap = with_agg(Aggregation::Gap)? as i64;
            rows.push(AuditRow::delta("WS - GAP", with_agg(Aggregation::Ws)? as i64 - gap, refs.then_some(3)));
            rows.push(AuditRow::delta(
                "Conv1D - GAP",
                with_agg(Aggregation::Conv1d)? as i64 - gap,
                refs.then_some(204_802),
            ));
            let af = with_fusion(FusionStrategy::Af)? as i64;
            rows.push(AuditRow::delta(
                "CF - AF",
                with_fusion(FusionStrategy::Cf)? as i64 - af,
                refs.then_some(2_089_440),
            ));
            rows.push(AuditRow::delta(
                "CAF - AF",
                with_fusion(FusionStrategy::Caf)? as i64 - af,
                refs.then_some(589_824),
            ));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_tables_are_internally_consistent() {
        for f in FusionStrategy::ALL {
            let gap = published_drivernet(Aggregation::Gap, *f);
            assert_eq!(published_drivernet(Aggregation::Ws, *f) - gap, 3);
            assert_eq!(published_drivernet(Aggregation::Conv1d, *f) - gap, 204_802);
        }
        for a in Aggregation::ALL {
            let af = published_drivernet(*a, FusionStrategy::Af);
            assert_eq!(published_drivernet(*a, FusionStrategy::Cf) - af, 2_089_440);
            assert_eq!(published_drivernet(*a, FusionStrategy::Caf) - af, 589_824);
        }
        assert_eq!(published_context(Aggregation::Ws) - published_context(Aggregation::Gap), 3);
        assert_eq!(published_context(Aggregation::Conv1d) - published_context(Aggregation::Gap), 196_608);
    }

    #[test]
    fn context_rows_match() {
        let rows = audit(&ModelConfig::paper().with_kind(ModelKind::Context)).unwrap();
        let flags: Vec<&str> = rows.iter().map(AuditRow::flag).collect();
        assert_eq!(flags, vec!["-", "MATCH", "MATCH", "MATCH"]);
        assert_eq!(rows[1].ours, 270_338);
    }

    #[test]
    fn narrow_configs_have_no_reference() {
        let rows = audit(&ModelConfig::compact().with_kind(ModelKind::Context)).unwrap();
        assert!(rows.iter().all(|r| r.paper.is_none()));
    }
}
