//! Stock protocol roles.
//!
//! | role | peer role | blackboard in | blackboard out |
//! |------|-----------|---------------|----------------|
//! | `bb84_sender` | `bb84_receiver` | | `sifted_key`, `qber_estimate` |
//! | `cascade_sender` | `cascade_receiver` | `sifted_key`, `qber_estimate` | `reconciled_key` |
//! | `ent_dist_source` | `ent_dist_receiver` | | |

pub mod bb84;
pub mod cascade;
pub mod entanglement;

use crate::framework::{RegistryError, RoleRegistry};

/// Blackboard key holding the sifted key as a `"0101…"` string.
pub const SIFTED_KEY: &str = "sifted_key";
/// Blackboard key holding the QBER estimate.
pub const QBER_ESTIMATE: &str = "qber_estimate";
/// Blackboard key holding the key after reconciliation.
pub const RECONCILED_KEY: &str = "reconciled_key";

pub fn register_all(registry: &mut RoleRegistry) -> Result<(), RegistryError> {
    for spec in bb84::role_specs()
        .into_iter()
        .chain(cascade::role_specs())
        .chain(entanglement::role_specs())
    {
        registry.register(spec)?;
    }
    Ok(())
}

/// Renders bits as a string of `'0'`/`'1'`.
pub fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|b| if *b == 0 { '0' } else { '1' }).collect()
}

/// Parses a `'0'`/`'1'` string; `None` on any other character.
pub fn bits_from_str(s: &str) -> Option<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(0),
            '1' => Some(1),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_strings() {
        assert_eq!(bits_to_string(&[0, 1, 1]), "011");
        assert_eq!(bits_from_str("0110"), Some(vec![0, 1, 1, 0]));
        assert_eq!(bits_from_str("01x"), None);
    }
}
