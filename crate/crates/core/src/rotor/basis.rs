use serde::{Deserialize, Serialize};

/// Which rotational levels are admitted into a basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    AllJ,
    EvenJOnly,
}

impl Parity {
    pub fn admits(self, j: u32) -> bool {
        match self {
            Parity::AllJ => true,
            Parity::EvenJOnly => j % 2 == 0,
        }
    }
}

/// A rotational state `|J,M⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JM {
    pub j: u32,
    pub m: i32,
}

impl JM {
    pub fn new(j: u32, m: i32) -> Self {
        JM { j, m }
    }
}

impl std::fmt::Display for JM {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "|{},{}⟩", self.j, self.m)
    }
}

/// Ordered `|J,M⟩` basis truncated at `j_max`.
///
/// States are ordered by increasing `J` and, within a level, by increasing
/// `M`: `|0,0⟩, |1,-1⟩, |1,0⟩, |1,1⟩, …`. Because of this ordering a basis
/// with a smaller `j_max` (and the same parity filter) is a prefix of a
/// larger one, which the kick construction relies on when padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RotorBasis {
    j_max: u32,
    parity: Parity,
    states: Vec<JM>,
    // offset of the first state of level J, indexed by J; None when J is
    // filtered out
    level_offset: Vec<Option<usize>>,
}

impl RotorBasis {
    pub fn new(j_max: u32, parity: Parity) -> Self {
        let mut states = Vec::new();
        let mut level_offset = Vec::with_capacity(j_max as usize + 1);
        for j in 0..=j_max {
            if parity.admits(j) {
                level_offset.push(Some(states.len()));
                let jj = j as i32;
                states.extend((-jj..=jj).map(|m| JM::new(j, m)));
            } else {
                level_offset.push(None);
            }
        }
        RotorBasis {
            j_max,
            parity,
            states,
            level_offset,
        }
    }

    pub fn j_max(&self) -> u32 {
        self.j_max
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[JM] {
        &self.states
    }

    pub fn state(&self, index: usize) -> JM {
        self.states[index]
    }

    /// Flat index of `|J,M⟩`, or `None` if the state is not in the basis.
    pub fn index_of(&self, state: JM) -> Option<usize> {
        let JM { j, m } = state;
        if j > self.j_max || m.unsigned_abs() > j {
            return None;
        }
        self.level_offset[j as usize].map(|off| off + (m + j as i32) as usize)
    }

    /// Admitted levels in increasing order.
    pub fn levels(&self) -> impl Iterator<Item = u32> + '_ {
        (0..=self.j_max).filter(move |&j| self.parity.admits(j))
    }

    /// Same parity filter, larger cutoff. `self` is a prefix of the result.
    pub fn padded(&self, extra: u32) -> RotorBasis {
        RotorBasis::new(self.j_max + extra, self.parity)
    }

    /// Whether `self` is a prefix of `other` (same parity, smaller cutoff).
    pub fn is_prefix_of(&self, other: &RotorBasis) -> bool {
        self.parity == other.parity && self.j_max <= other.j_max
    }
}
