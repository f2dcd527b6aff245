//! Reserved tokens. Their ids are their positions in [`RESERVED`].

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
/// Start of a condition.
pub const COND: &str = "<SEP>";
/// Start of a character's name.
pub const SOC: &str = "<soc>";
/// Start of the action list.
pub const SOA: &str = "<soa>";
/// Start of the emotion.
pub const SOE: &str = "<soe>";
/// Start of a single action after the first.
pub const ACT_SEP: &str = "<sep>";
/// Stands in for an empty action list.
pub const NO_ACTION: &str = "<no_action>";

pub const RESERVED: [&str; 10] = [BOS, EOS, PAD, UNK, COND, SOC, SOA, SOE, ACT_SEP, NO_ACTION];

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const PAD_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Surrogate name carried by padding conditions.
pub const PAD_NAME: &str = "none";

pub fn is_special(token: &str) -> bool {
    RESERVED.contains(&token)
}

/// Maps `<SEP>` or its typeset form `⟨SEP⟩` to the reserved spelling.
pub fn canonical(token: &str) -> Option<&'static str> {
    let ascii;
    let token = match token.strip_prefix('⟨').and_then(|t| t.strip_suffix('⟩')) {
        Some(inner) => {
            ascii = format!("<{inner}>");
            ascii.as_str()
        }
        None => token,
    };
    RESERVED.iter().copied().find(|r| *r == token)
}
