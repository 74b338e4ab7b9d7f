//! The two worked cleaning examples, reproduced character for character.

use kpcnet_core::textproc::{clean_context, clean_question, QuestionFilter};

use crate::Outcome;

pub fn criterion() -> Outcome {
    let mut out = Outcome::new();
    let filter = QuestionFilter::default();

    let escaped = "does it slice like zucchini & amp ; cucumbers?";
    let got = clean_context(escaped);
    out.check(got == "does it slice like zucchini & cucumbers?", format!("unescape: {got:?}"));

    let trailing = "where is this product made ? i contacted customer service and the representative was uninformed…";
    let got = clean_question(&clean_context(trailing), &filter);
    out.check(got.as_deref() == Some("where is this product made ?"), format!("question cut: {got:?}"));
    out
}
