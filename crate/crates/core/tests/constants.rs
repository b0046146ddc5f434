//! Constants fixed by the defaults.

use corpusseg::losses::DEFAULT_UOI_WEIGHT;
use corpusseg::rerank::{feature_len, DEFAULT_BACKGROUND_PENALTY};
use corpusseg::trainer::Protocol;

#[test]
fn combined_loss_weight_is_seven_tenths() {
    assert_eq!(DEFAULT_UOI_WEIGHT, 0.7);
    assert_eq!(Protocol::default().alpha, 0.7);
}

#[test]
fn background_penalty_is_two_hundredths() {
    assert_eq!(DEFAULT_BACKGROUND_PENALTY, 0.02);
}

#[test]
fn feature_block_for_twenty_one_classes() {
    // Two KL directions plus four overlap statistics over 21 classes.
    assert_eq!(feature_len(21), 2 + 84);
}
