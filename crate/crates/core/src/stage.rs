//! One token-reduction stage applied to a single sequence.

use crate::error::{Error, Result};
use crate::numerics::{gather_rows, Matrix};
use crate::policy::{PruneSchedule, ScoreVector, TokenPartition};
use crate::squeeze::{
    apply_fusion, fusion_weights, match_tokens, reorganize_weights, similarity, weighted_mean,
    MatchResult, TokenSet,
};
use crate::vit::{AttentionRecord, Mode};

pub struct StageInput<'a> {
    /// Live tokens, class token at row 0.
    pub tokens: &'a Matrix,
    pub positional: Option<&'a Matrix>,
    pub partition: &'a TokenPartition,
    pub scores: &'a ScoreVector,
    /// Attention over exactly these tokens, needed for attention reuse.
    pub attention: Option<&'a AttentionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub tokens: Matrix,
    pub positional: Option<Matrix>,
    pub matched: Option<MatchResult>,
    pub zero_norm_tokens: usize,
    pub empty_score_mass: bool,
}

fn gather_opt(m: Option<&Matrix>, rows: &[usize]) -> Result<Option<Matrix>> {
    m.map(|m| gather_rows(m, rows)).transpose()
}

pub fn reduce_tokens(mode: Mode, input: &StageInput<'_>, schedule: &PruneSchedule) -> Result<StageOutput> {
    let p = input.partition;
    if p.live_patches() + 1 != input.tokens.rows() {
        return Err(Error::shape(
            "stage partition",
            format!("{} tokens", input.tokens.rows()),
            p.live_patches() + 1,
        ));
    }
    let keep_rows = p.reserved_tokens();
    let mut out = StageOutput {
        tokens: gather_rows(input.tokens, &keep_rows)?,
        positional: gather_opt(input.positional, &keep_rows)?,
        matched: None,
        zero_norm_tokens: 0,
        empty_score_mass: false,
    };
    if p.pruned.is_empty() {
        return Ok(out);
    }
    let pruned_rows = p.pruned_tokens();
    match mode {
        Mode::Vanilla => {
            return Err(Error::Config("vanilla mode has no reduction stages".into()));
        }
        Mode::Prune => {}
        Mode::Reorganize => {
            let (weights, empty) = reorganize_weights(p, input.scores)?;
            let extra = weighted_mean(input.tokens, &pruned_rows, &weights);
            out.tokens = out.tokens.vconcat(&extra)?;
            if let (Some(pos_in), Some(pos_out)) = (input.positional, out.positional.as_mut()) {
                *pos_out = pos_out.vconcat(&weighted_mean(pos_in, &pruned_rows, &weights))?;
            }
            out.empty_score_mass = empty;
        }
        Mode::Tps => {
            // Hosts are reserved patch tokens; the class token is never matched.
            let host_rows = &keep_rows[1..];
            let hosts = gather_rows(input.tokens, host_rows)?;
            let pruned = gather_rows(input.tokens, &pruned_rows)?;
            let host_pos = gather_opt(input.positional, host_rows)?;
            let pruned_pos = gather_opt(input.positional, &pruned_rows)?;
            let c = similarity(
                TokenSet {
                    features: &pruned,
                    positional: pruned_pos.as_ref(),
                    token_indices: &pruned_rows,
                },
                TokenSet {
                    features: &hosts,
                    positional: host_pos.as_ref(),
                    token_indices: host_rows,
                },
                schedule.similarity_source,
                schedule.feature_type,
                input.attention,
            )?;
            let matched = match_tokens(&c)?;
            let w = fusion_weights(&c, &matched);
            let fused = apply_fusion(&hosts, &pruned, &w, &matched);
            out.tokens = gather_rows(input.tokens, &[0])?.vconcat(&fused)?;
            if let (Some(pos_in), Some(hp), Some(pp)) = (input.positional, host_pos, pruned_pos) {
                let fused_pos = apply_fusion(&hp, &pp, &w, &matched);
                out.positional = Some(gather_rows(pos_in, &[0])?.vconcat(&fused_pos)?);
            }
            out.zero_norm_tokens = c.zero_norm_tokens;
            out.matched = Some(matched);
        }
    }
    Ok(out)
}
