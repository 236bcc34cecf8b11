//! Negation-aware training: caption negation, cue detection and the
//! bidirectionally constrained losses.

mod loss;
mod text;

pub use loss::{
    bcl_grad, bcl_text_anchor, bcl_video_anchor, bnl_loss, bnl_loss_value, BnlOutput, Margins,
    Triplet,
};
pub use text::{
    candidate_positions, detect_negation, is_negation_cue, negate_caption, negate_caption_with,
    Caption, Negation, NegationCues, PosTag, AUXILIARIES, DEFAULT_CUE, NEGATION_CUES,
};
