//! Semi-totalistic rules in `Bx/Sy` notation, their integer ids, the B0
//! emulation transforms, and the Boolean transition vectors derived from them.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of distinct semi-totalistic rules (nine born digits, nine survive digits).
pub const RULE_COUNT: u32 = 1 << 18;

/// Dimensions in one half (even or odd) of a behaviour vector.
pub const HALF_DIMS: usize = 36;

/// Dimensions in a full behaviour vector.
pub const DIMS: usize = 2 * HALF_DIMS;

/// A set of neighbour counts drawn from `0..=8`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DigitSet(u16);

impl DigitSet {
    const FULL: u16 = 0x1ff;

    pub const EMPTY: DigitSet = DigitSet(0);

    /// Builds a set from a 9-bit mask; bits above 8 are discarded.
    pub const fn from_mask(mask: u16) -> Self {
        DigitSet(mask & Self::FULL)
    }

    pub const fn mask(self) -> u16 {
        self.0
    }

    pub fn contains(self, n: u8) -> bool {
        n <= 8 && self.0 & (1 << n) != 0
    }

    /// Inserts a digit; returns false if it was already present.
    ///
    /// Panics when `n > 8`.
    pub fn insert(&mut self, n: u8) -> bool {
        assert!(n <= 8, "neighbour count {n} out of range");
        let fresh = !self.contains(n);
        self.0 |= 1 << n;
        fresh
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Digits in ascending order.
    pub fn iter(self) -> impl Iterator<Item = u8> {
        (0u8..=8).filter(move |&n| self.contains(n))
    }

    /// Complement within `{0..8}`.
    pub fn complement(self) -> Self {
        DigitSet(!self.0 & Self::FULL)
    }

    /// `{8 - n : n ∈ self}`: neighbour counts seen from the colour-reversed grid.
    pub fn reflect(self) -> Self {
        DigitSet(self.0.reverse_bits() >> 7)
    }
}

impl FromIterator<u8> for DigitSet {
    fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> Self {
        let mut set = DigitSet::EMPTY;
        for n in iter {
            set.insert(n);
        }
        set
    }
}

impl fmt::Debug for DigitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for DigitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in self.iter() {
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

/// A two-state Moore-neighbourhood semi-totalistic rule.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rule {
    pub born: DigitSet,
    pub survive: DigitSet,
}

impl Rule {
    pub const fn new(born: DigitSet, survive: DigitSet) -> Self {
        Rule { born, survive }
    }

    /// Conway's Game of Life, B3/S23.
    pub const fn life() -> Self {
        Rule::new(DigitSet::from_mask(1 << 3), DigitSet::from_mask(0b1100))
    }

    pub fn has_b0(self) -> bool {
        self.born.contains(0)
    }

    pub fn id(self) -> RuleId {
        RuleId(self.born.mask() as u32 | (self.survive.mask() as u32) << 9)
    }

    /// Next state of a cell given its current state and live neighbour count.
    pub fn next_state(self, alive: bool, neighbours: u8) -> bool {
        if alive {
            self.survive.contains(neighbours)
        } else {
            self.born.contains(neighbours)
        }
    }

    /// Black/white reversal: the rule obeyed by the complemented grid.
    pub fn reversed(self) -> Rule {
        Rule::new(
            self.survive.complement().reflect(),
            self.born.complement().reflect(),
        )
    }

    pub fn classify(self) -> EmulationPlan {
        EmulationPlan::new(self)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}/S{}", self.born, self.survive)
    }
}

impl fmt::Debug for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rule({self})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleParseError {
    #[error("expected 'B' at position {pos}")]
    MissingBorn { pos: usize },
    #[error("expected '/' at position {pos}")]
    MissingSlash { pos: usize },
    #[error("expected 'S' at position {pos}")]
    MissingSurvive { pos: usize },
    #[error("invalid character {ch:?} at position {pos}; neighbour counts are 0-8")]
    InvalidDigit { ch: char, pos: usize },
    #[error("digit {digit} repeated at position {pos}")]
    RepeatedDigit { digit: u8, pos: usize },
}

impl FromStr for Rule {
    type Err = RuleParseError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        parse_rule(text)
    }
}

/// Parses `B<digits>/S<digits>` (case-insensitive, digits in any order).
pub fn parse_rule(text: &str) -> Result<Rule, RuleParseError> {
    let mut chars = text.char_indices().peekable();

    match chars.next() {
        Some((_, 'B' | 'b')) => {}
        Some((pos, _)) => return Err(RuleParseError::MissingBorn { pos }),
        None => return Err(RuleParseError::MissingBorn { pos: 0 }),
    }

    let mut born = DigitSet::EMPTY;
    loop {
        match chars.next() {
            Some((_, '/')) => break,
            Some((pos, 'S' | 's')) => return Err(RuleParseError::MissingSlash { pos }),
            Some((pos, ch)) => push_digit(&mut born, ch, pos)?,
            None => return Err(RuleParseError::MissingSlash { pos: text.len() }),
        }
    }

    match chars.next() {
        Some((_, 'S' | 's')) => {}
        Some((pos, _)) => return Err(RuleParseError::MissingSurvive { pos }),
        None => return Err(RuleParseError::MissingSurvive { pos: text.len() }),
    }

    let mut survive = DigitSet::EMPTY;
    for (pos, ch) in chars {
        push_digit(&mut survive, ch, pos)?;
    }

    Ok(Rule::new(born, survive))
}

fn push_digit(set: &mut DigitSet, ch: char, pos: usize) -> Result<(), RuleParseError> {
    let digit = match ch {
        '0'..='8' => ch as u8 - b'0',
        _ => return Err(RuleParseError::InvalidDigit { ch, pos }),
    };
    if set.insert(digit) {
        Ok(())
    } else {
        Err(RuleParseError::RepeatedDigit { digit, pos })
    }
}

/// Canonical text form, digits ascending.
pub fn format_rule(rule: Rule) -> String {
    rule.to_string()
}

/// Integer index of a rule: bit `n` set iff `n` is a born digit, bit `9 + n`
/// set iff `n` is a survive digit.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct RuleId(u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("rule id {0} out of range (must be < {RULE_COUNT})")]
pub struct RuleIdOutOfRange(pub u32);

impl RuleId {
    pub fn new(value: u32) -> Result<Self, RuleIdOutOfRange> {
        if value < RULE_COUNT {
            Ok(RuleId(value))
        } else {
            Err(RuleIdOutOfRange(value))
        }
    }

    pub const fn value(self) -> u32 {
        self.0
    }

    pub fn rule(self) -> Rule {
        Rule::new(
            DigitSet::from_mask(self.0 as u16),
            DigitSet::from_mask((self.0 >> 9) as u16),
        )
    }

    /// Every id in ascending order.
    pub fn all() -> impl Iterator<Item = RuleId> {
        (0..RULE_COUNT).map(RuleId)
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn encode(rule: Rule) -> RuleId {
    rule.id()
}

pub fn decode(value: u32) -> Result<Rule, RuleIdOutOfRange> {
    RuleId::new(value).map(RuleId::rule)
}

/// How a rule is actually simulated so that the infinite dead background
/// never turns live.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PlanKind {
    /// No B0: run the rule as is.
    Plain { run: Rule },
    /// B0 with S8: run the black/white reversed rule.
    AntiInfinity { run: Rule },
    /// B0 without S8: alternate one rule at even generations and another at odd ones.
    Strobing { even: Rule, odd: Rule },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct EmulationPlan {
    pub original: Rule,
    pub kind: PlanKind,
}

impl EmulationPlan {
    pub fn new(original: Rule) -> Self {
        let kind = if !original.has_b0() {
            PlanKind::Plain { run: original }
        } else if original.survive.contains(8) {
            PlanKind::AntiInfinity {
                run: original.reversed(),
            }
        } else {
            // Even steps write the complement of the true next state; odd
            // steps read a complemented grid and write true states.
            PlanKind::Strobing {
                even: Rule::new(original.born.complement(), original.survive.complement()),
                odd: Rule::new(original.survive.reflect(), original.born.reflect()),
            }
        };
        EmulationPlan { original, kind }
    }

    /// Rule applied at generation `generation`.
    pub fn rule_at(&self, generation: u64) -> Rule {
        if generation.is_multiple_of(2) {
            self.even_rule()
        } else {
            self.odd_rule()
        }
    }

    pub fn even_rule(&self) -> Rule {
        match self.kind {
            PlanKind::Plain { run } | PlanKind::AntiInfinity { run } => run,
            PlanKind::Strobing { even, .. } => even,
        }
    }

    pub fn odd_rule(&self) -> Rule {
        match self.kind {
            PlanKind::Plain { run } | PlanKind::AntiInfinity { run } => run,
            PlanKind::Strobing { odd, .. } => odd,
        }
    }

    pub fn is_strobing(&self) -> bool {
        matches!(self.kind, PlanKind::Strobing { .. })
    }

    pub fn boolean_vector(&self) -> Bool72 {
        boolean_vector(self)
    }

    /// The other rule that is simulated by exactly the same run rule, if any.
    ///
    /// A B0-free rule without S8 and its reversal (which has B0 and S8) are
    /// indistinguishable once emulated. Strobing rules have no such partner.
    pub fn duplicate(&self) -> Option<Rule> {
        match self.kind {
            PlanKind::Plain { run } if !run.survive.contains(8) => Some(run.reversed()),
            PlanKind::Plain { .. } | PlanKind::Strobing { .. } => None,
            PlanKind::AntiInfinity { run } => Some(run),
        }
    }

    /// Human-readable form of the transformation, e.g. `B3/S23` or
    /// `even B1245678/S0145678, odd B56/S58`. Empty for plain rules.
    pub fn change_description(&self) -> String {
        match self.kind {
            PlanKind::Plain { .. } => String::new(),
            PlanKind::AntiInfinity { run } => run.to_string(),
            PlanKind::Strobing { even, odd } => format!("even {even}, odd {odd}"),
        }
    }
}

pub fn classify(rule: Rule) -> EmulationPlan {
    EmulationPlan::new(rule)
}

/// Transition classes, in vector row order.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum Transition {
    /// 0 → 1
    Born = 0,
    /// 1 → 1
    Survive = 1,
    /// 0 → 0
    Unborn = 2,
    /// 1 → 0
    Die = 3,
}

impl Transition {
    pub const ALL: [Transition; 4] = [
        Transition::Born,
        Transition::Survive,
        Transition::Unborn,
        Transition::Die,
    ];

    pub fn from_states(before: bool, after: bool) -> Self {
        match (before, after) {
            (false, true) => Transition::Born,
            (true, true) => Transition::Survive,
            (false, false) => Transition::Unborn,
            (true, false) => Transition::Die,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Transition::Born => 'B',
            Transition::Survive => 'S',
            Transition::Unborn => 'U',
            Transition::Die => 'D',
        }
    }

    /// Index within a 36-dimensional half.
    pub fn half_index(self, neighbours: u8) -> usize {
        self as usize * 9 + neighbours as usize
    }
}

/// Which half of a 72-dimensional vector.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Half {
    Even = 0,
    Odd = 1,
}

impl Half {
    pub fn name(self) -> &'static str {
        match self {
            Half::Even => "even",
            Half::Odd => "odd",
        }
    }
}

/// Index within a full 72-dimensional vector.
pub fn dim_index(half: Half, transition: Transition, neighbours: u8) -> usize {
    half as usize * HALF_DIMS + transition.half_index(neighbours)
}

/// Column labels such as `even_B0` … `odd_D8`, in vector order.
pub fn dim_labels() -> Vec<String> {
    let mut labels = Vec::with_capacity(DIMS);
    for half in [Half::Even, Half::Odd] {
        for t in Transition::ALL {
            for n in 0..=8 {
                labels.push(format!("{}_{}{}", half.name(), t.letter(), n));
            }
        }
    }
    labels
}

/// The 72 allowed/forbidden transition flags of an emulation plan.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bool72(u128);

impl Bool72 {
    fn half_bits(rule: Rule) -> u64 {
        let born = rule.born.mask() as u64;
        let survive = rule.survive.mask() as u64;
        let unborn = rule.born.complement().mask() as u64;
        let die = rule.survive.complement().mask() as u64;
        born | survive << 9 | unborn << 18 | die << 27
    }

    pub fn get(self, dim: usize) -> bool {
        dim < DIMS && self.0 >> dim & 1 == 1
    }

    pub fn count_ones(self) -> u32 {
        self.0.count_ones()
    }

    /// Number of positions where the two vectors differ.
    pub fn hamming(self, other: Bool72) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    pub fn to_array(self) -> [f64; DIMS] {
        std::array::from_fn(|i| if self.get(i) { 1.0 } else { 0.0 })
    }
}

impl fmt::Debug for Bool72 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = (0..DIMS)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        write!(f, "Bool72({bits})")
    }
}

pub fn boolean_vector(plan: &EmulationPlan) -> Bool72 {
    let even = Bool72::half_bits(plan.even_rule()) as u128;
    let odd = Bool72::half_bits(plan.odd_rule()) as u128;
    Bool72(even | odd << HALF_DIMS)
}
