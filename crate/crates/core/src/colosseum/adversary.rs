//! Byzantine behaviors. Each malicious node carries a mode mask per role;
//! the simulator consults it in the matching message handler.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Validator,
    Keeper,
    Player,
    Barrier,
}

impl Role {
    /// Highest mode number the role understands.
    pub fn max_mode(self) -> u8 {
        match self {
            Role::Validator => 5,
            Role::Keeper => 4,
            Role::Player | Role::Barrier => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Role::Validator => "validator",
            Role::Keeper => "keeper",
            Role::Player => "player",
            Role::Barrier => "barrier",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ValidatorMode {
    Silent = 1,
    PlayersOnly = 2,
    KeepersOnly = 3,
    OnePlayer = 4,
    Delayed = 5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum KeeperMode {
    /// Stores and forwards results but never votes.
    NoVerify = 1,
    /// Drops results: no storage, no gossip, no answers to queries.
    NoStore = 2,
    /// Raises an alert without evidence for every match it hears about.
    FalseAlert = 3,
    /// Votes against every match.
    VoteAgainst = 4,
}

/// Which nodes a spec applies to.
#[derive(Clone, Debug, PartialEq)]
pub enum Selector {
    Nodes(Vec<u32>),
    Fraction(f64),
}

/// One entry of the adversary config block.
///
/// Text form is `role:who:modes`, with `who` either a fraction such as
/// `0.2` or node ids such as `#3+7`, and `modes` such as `1+5`. Config
/// files store the text form.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarySpec {
    pub role: Role,
    pub who: Selector,
    pub modes: Vec<u8>,
}

impl AdversarySpec {
    pub fn validate(&self, n: u32) -> Result<(), ConfigError> {
        let bad = |why: String| Err(ConfigError::Invalid(format!("adversary {self}: {why}")));
        if self.modes.is_empty() {
            return bad("no modes".into());
        }
        if let Some(m) = self.modes.iter().find(|&&m| m == 0 || m > self.role.max_mode()) {
            return bad(format!("mode {m} out of range 1..={}", self.role.max_mode()));
        }
        match &self.who {
            Selector::Fraction(f) if !(0.0..=1.0).contains(f) => bad(format!("fraction {f} outside [0, 1]")),
            Selector::Nodes(ids) if ids.iter().any(|&i| i >= n) => bad("node id out of range".into()),
            _ => Ok(()),
        }
    }

    fn mask(&self) -> u8 {
        self.modes.iter().fold(0, |m, &k| m | 1 << k)
    }
}

impl fmt::Display for AdversarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[String]| v.join("+");
        let who = match &self.who {
            Selector::Fraction(x) => x.to_string(),
            Selector::Nodes(ids) => format!("#{}", join(&ids.iter().map(u32::to_string).collect::<Vec<_>>())),
        };
        let modes = join(&self.modes.iter().map(u8::to_string).collect::<Vec<_>>());
        write!(f, "{}:{who}:{modes}", self.role.name())
    }
}

impl Serialize for AdversarySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AdversarySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for AdversarySpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::Invalid(format!("adversary spec {s:?}: expected role:who:modes"));
        let mut parts = s.trim().split(':');
        let role = match parts.next().ok_or_else(bad)? {
            "validator" => Role::Validator,
            "keeper" => Role::Keeper,
            "player" => Role::Player,
            "barrier" => Role::Barrier,
            _ => return Err(bad()),
        };
        let who = parts.next().ok_or_else(bad)?;
        let who = if let Some(ids) = who.strip_prefix('#') {
            Selector::Nodes(
                ids.split('+')
                    .map(|i| i.parse().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?,
            )
        } else {
            Selector::Fraction(who.parse().map_err(|_| bad())?)
        };
        let modes = match parts.next() {
            Some(m) => m
                .split('+')
                .map(|i| i.parse().map_err(|_| bad()))
                .collect::<Result<_, _>>()?,
            None => vec![1],
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(AdversarySpec { role, who, modes })
    }
}

/// Mode masks of one node; bit `k` set means mode `k` is active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Behavior {
    pub validator: u8,
    pub keeper: u8,
    pub multi_play: bool,
    pub barrier_bypass: bool,
}

impl Behavior {
    pub fn is_honest(&self) -> bool {
        *self == Behavior::default()
    }

    pub fn keeper_has(&self, m: KeeperMode) -> bool {
        self.keeper & 1 << m as u8 != 0
    }

    /// The misbehavior used for one match, picked among the active modes.
    pub fn validator_mode<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<ValidatorMode> {
        let active: Vec<u8> = (1..=5).filter(|k| self.validator & 1 << k != 0).collect();
        active.choose(rng).map(|&k| match k {
            1 => ValidatorMode::Silent,
            2 => ValidatorMode::PlayersOnly,
            3 => ValidatorMode::KeepersOnly,
            4 => ValidatorMode::OnePlayer,
            _ => ValidatorMode::Delayed,
        })
    }
}

/// Gives every node its behavior. Fraction selectors all draw from one
/// seeded ordering of the nodes, so a validator spec and a keeper spec with
/// the same fraction hit the same nodes.
pub fn assign_behaviors<R: Rng + ?Sized>(n: u32, specs: &[AdversarySpec], rng: &mut R) -> Vec<Behavior> {
    let mut order: Vec<u32> = (0..n).collect();
    order.shuffle(rng);
    let mut out = vec![Behavior::default(); n as usize];
    for spec in specs {
        let chosen: Vec<u32> = match &spec.who {
            Selector::Nodes(ids) => ids.clone(),
            Selector::Fraction(f) => order[..((f * n as f64).round() as usize).min(n as usize)].to_vec(),
        };
        for id in chosen {
            let b = &mut out[id as usize];
            match spec.role {
                Role::Validator => b.validator |= spec.mask(),
                Role::Keeper => b.keeper |= spec.mask(),
                Role::Player => b.multi_play = true,
                Role::Barrier => b.barrier_bypass = true,
            }
        }
    }
    out
}

/// Where a validator sends a finished result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub players: [bool; 2],
    pub keepers: bool,
    pub delay: SimTime,
}

impl Delivery {
    pub const HONEST: Delivery = Delivery {
        players: [true, true],
        keepers: true,
        delay: SimTime::ZERO,
    };
}

/// `None` means the validator never replies. `late` is the extra wait a
/// delaying validator adds; `coin` picks the lucky player for mode 4.
pub fn validator_delivery(mode: Option<ValidatorMode>, late: SimTime, coin: bool) -> Option<Delivery> {
    let d = Delivery::HONEST;
    match mode {
        None => Some(d),
        Some(ValidatorMode::Silent) => None,
        Some(ValidatorMode::PlayersOnly) => Some(Delivery { keepers: false, ..d }),
        Some(ValidatorMode::KeepersOnly) => Some(Delivery {
            players: [false, false],
            ..d
        }),
        Some(ValidatorMode::OnePlayer) => Some(Delivery {
            players: [coin, !coin],
            keepers: false,
            ..d
        }),
        Some(ValidatorMode::Delayed) => Some(Delivery { delay: late, ..d }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_text_round_trips() {
        for s in ["validator:0.2:1+5", "keeper:#3+7:2+4", "player:0.1:1", "barrier:#0:1"] {
            let spec: AdversarySpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
            spec.validate(10).unwrap();
        }
        assert_eq!("player:0.5".parse::<AdversarySpec>().unwrap().modes, vec![1]);
        assert!("wizard:0.2:1".parse::<AdversarySpec>().is_err());
        assert!("keeper:0.2:5".parse::<AdversarySpec>().unwrap().validate(10).is_err());
        assert!("keeper:#12:1".parse::<AdversarySpec>().unwrap().validate(10).is_err());
        assert!("keeper:1.5:1".parse::<AdversarySpec>().unwrap().validate(10).is_err());
    }

    #[test]
    fn fractions_share_nodes_across_roles() {
        let specs: Vec<AdversarySpec> = ["validator:0.2:1", "keeper:0.2:1+2", "player:#0:1"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let b = assign_behaviors(50, &specs, &mut ChaCha8Rng::seed_from_u64(1));
        let v = b.iter().filter(|x| x.validator != 0).count();
        let both = b.iter().filter(|x| x.validator == 0b10 && x.keeper == 0b110).count();
        assert_eq!(v, 10);
        assert_eq!(both, 10);
        assert!(b[0].multi_play);
        assert_eq!(
            b.iter().filter(|x| !x.is_honest()).count(),
            10 + (b[0].validator == 0) as usize
        );
        assert!(b[1..].iter().all(|x| !x.multi_play));
    }

    #[test]
    fn delivery_per_mode() {
        let late = SimTime::from_millis(4000);
        assert_eq!(validator_delivery(None, late, true), Some(Delivery::HONEST));
        assert_eq!(validator_delivery(Some(ValidatorMode::Silent), late, true), None);
        let p = validator_delivery(Some(ValidatorMode::PlayersOnly), late, true).unwrap();
        assert_eq!((p.players, p.keepers), ([true, true], false));
        let k = validator_delivery(Some(ValidatorMode::KeepersOnly), late, true).unwrap();
        assert_eq!((k.players, k.keepers), ([false, false], true));
        let one = validator_delivery(Some(ValidatorMode::OnePlayer), late, false).unwrap();
        assert_eq!((one.players, one.keepers), ([false, true], false));
        assert_eq!(
            validator_delivery(Some(ValidatorMode::Delayed), late, true)
                .unwrap()
                .delay,
            late
        );
    }

    #[test]
    fn validator_mode_picks_only_active_modes() {
        let b = Behavior {
            validator: 1 << 2 | 1 << 5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = [0; 6];
        for _ in 0..200 {
            seen[b.validator_mode(&mut rng).unwrap() as usize] += 1;
        }
        assert_eq!(seen[1] + seen[3] + seen[4], 0);
        assert!(seen[2] > 50 && seen[5] > 50);
        assert_eq!(Behavior::default().validator_mode(&mut rng), None);
    }
}
