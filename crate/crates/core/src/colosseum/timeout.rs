/// What a player does after its validator went quiet and it re-paired for
/// the same round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RepairOutcome {
    Proceed,
    Stop,
    /// Not enough results yet to decide.
    Wait,
}

/// `first` is the result of the match whose validator timed out, `second`
/// of the replacement match; `Some(true)` is a win.
///
/// A player may only move on holding a win for every match it played in the
/// round, so a late loss always stops it. With no word on the first match a
/// second win is enough, but that decision is revisited if the first result
/// surfaces later.
pub fn resolve_repair(first: Option<bool>, second: Option<bool>) -> RepairOutcome {
    match (first, second) {
        (Some(false), _) | (_, Some(false)) => RepairOutcome::Stop,
        (Some(true), Some(true)) | (None, Some(true)) => RepairOutcome::Proceed,
        (_, None) => RepairOutcome::Wait,
    }
}
