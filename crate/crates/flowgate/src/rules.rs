//! ACL rule model: prefixes, port ranges, wildcard masks, rule files, and
//! the top-down first-match linear classifier.
//!
//! `classify_linear` is the reference semantics: every other classifier in
//! this crate must return exactly the same rule for every key.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

/// Default cap on how many prefixes a single wildcard mask may expand into.
pub const DEFAULT_WILDCARD_EXPANSION_LIMIT: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("prefix length {0} exceeds 32")]
    PrefixLength(u8),
    #[error("port range lower bound {lo} exceeds upper bound {hi}")]
    PortOrder { lo: u16, hi: u16 },
    #[error("wildcard expansion needs {needed} prefixes, limit is {limit}")]
    ExpansionOverflow { needed: usize, limit: usize },
    #[error("duplicate rule priority {0}")]
    DuplicatePriority(u32),
    #[error("duplicate rule id {0}")]
    DuplicateId(RuleId),
}

/// Parse failure for a rule file, carrying the 1-based source line.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len)
    }
}

/// IPv4 prefix in canonical form: address bits below `32 - len` are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ipv4Prefix {
    addr: u32,
    len: u8,
}

impl Ipv4Prefix {
    /// Matches every address.
    pub const ANY: Ipv4Prefix = Ipv4Prefix { addr: 0, len: 0 };

    /// Builds a prefix, canonicalizing the address (host bits cleared).
    pub fn new(addr: u32, len: u8) -> Result<Self, RuleError> {
        if len > 32 {
            return Err(RuleError::PrefixLength(len));
        }
        Ok(Ipv4Prefix {
            addr: addr & mask(len),
            len,
        })
    }

    pub fn addr(&self) -> u32 {
        self.addr
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_any(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr & mask(self.len) == self.addr
    }

    /// First address covered by the prefix.
    pub fn first(&self) -> u32 {
        self.addr
    }

    /// Last address covered by the prefix.
    pub fn last(&self) -> u32 {
        self.addr | !mask(self.len)
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", Ipv4Addr::from(self.addr), self.len)
    }
}

impl fmt::Debug for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Ipv4Prefix {
    type Err = RuleError;

    /// Parses `a.b.c.d/len`. A bare address is taken as a /32 host prefix.
    fn from_str(s: &str) -> Result<Self, RuleError> {
        let (addr_s, len_s) = match s.split_once('/') {
            Some((a, l)) => (a, Some(l)),
            None => (s, None),
        };
        let addr: Ipv4Addr = addr_s
            .parse()
            .map_err(|_| RuleError::PrefixLength(u8::MAX))?;
        let len = match len_s {
            Some(l) => l.parse::<u8>().map_err(|_| RuleError::PrefixLength(u8::MAX))?,
            None => 32,
        };
        Ipv4Prefix::new(u32::from(addr), len)
    }
}

/// Inclusive port interval. The full wildcard is `[0, 65535]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortRange {
    lo: u16,
    hi: u16,
}

impl PortRange {
    pub const FULL: PortRange = PortRange { lo: 0, hi: u16::MAX };

    pub fn new(lo: u16, hi: u16) -> Result<Self, RuleError> {
        if lo > hi {
            return Err(RuleError::PortOrder { lo, hi });
        }
        Ok(PortRange { lo, hi })
    }

    pub fn exact(port: u16) -> Self {
        PortRange { lo: port, hi: port }
    }

    pub fn lo(&self) -> u16 {
        self.lo
    }

    pub fn hi(&self) -> u16 {
        self.hi
    }

    pub fn contains(&self, port: u16) -> bool {
        self.lo <= port && port <= self.hi
    }

    pub fn is_full(&self) -> bool {
        *self == Self::FULL
    }
}

impl fmt::Display for PortRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_full() {
            write!(f, "*")
        } else if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}-{}", self.lo, self.hi)
        }
    }
}

/// IP protocol matcher: an exact protocol number or a wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtoMatch {
    Any,
    Value(u8),
}

impl ProtoMatch {
    pub fn matches(&self, proto: u8) -> bool {
        match self {
            ProtoMatch::Any => true,
            ProtoMatch::Value(v) => *v == proto,
        }
    }
}

impl fmt::Display for ProtoMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtoMatch::Any => write!(f, "*"),
            ProtoMatch::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Rule action. `Mirror` forwards a copy of matching traffic to the
/// monitoring ports instead of terminating it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Permit,
    Deny,
    Mirror,
}

impl Action {
    fn as_str(&self) -> &'static str {
        match self {
            Action::Permit => "permit",
            Action::Deny => "deny",
            Action::Mirror => "mirror",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "permit" => Ok(Action::Permit),
            "deny" => Ok(Action::Deny),
            "mirror" => Ok(Action::Mirror),
            _ => Err(()),
        }
    }
}

/// Opaque rule identifier, unique within a [`RuleSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleId(pub u32);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A single prioritized 5-tuple filter rule. Lower priority number is
/// matched first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AclRule {
    pub id: RuleId,
    pub priority: u32,
    pub proto: ProtoMatch,
    pub src: Ipv4Prefix,
    pub dst: Ipv4Prefix,
    pub sport: PortRange,
    pub dport: PortRange,
    pub action: Action,
}

impl AclRule {
    pub fn matches(&self, key: &FiveTupleKey) -> bool {
        self.proto.matches(key.proto)
            && self.src.contains(key.src_addr)
            && self.dst.contains(key.dst_addr)
            && self.sport.contains(key.sport)
            && self.dport.contains(key.dport)
    }
}

/// 104-bit classification key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FiveTupleKey {
    pub proto: u8,
    pub src_addr: u32,
    pub dst_addr: u32,
    pub sport: u16,
    pub dport: u16,
}

impl fmt::Display for FiveTupleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.proto,
            Ipv4Addr::from(self.src_addr),
            Ipv4Addr::from(self.dst_addr),
            self.sport,
            self.dport
        )
    }
}

impl FromStr for FiveTupleKey {
    type Err = String;

    /// Parses the key CSV line `proto,src,dst,sport,dport`.
    fn from_str(s: &str) -> Result<Self, String> {
        let fields: Vec<&str> = s.trim().split(',').collect();
        if fields.len() != 5 {
            return Err(format!("expected 5 comma-separated fields, got {}", fields.len()));
        }
        let proto = fields[0]
            .trim()
            .parse::<u8>()
            .map_err(|_| format!("bad protocol number {:?}", fields[0]))?;
        let parse_addr = |s: &str| -> Result<u32, String> {
            s.trim()
                .parse::<Ipv4Addr>()
                .map(u32::from)
                .map_err(|_| format!("bad IPv4 address {s:?}"))
        };
        let parse_port = |s: &str| -> Result<u16, String> {
            s.trim().parse::<u16>().map_err(|_| format!("bad port {s:?}"))
        };
        Ok(FiveTupleKey {
            proto,
            src_addr: parse_addr(fields[1])?,
            dst_addr: parse_addr(fields[2])?,
            sport: parse_port(fields[3])?,
            dport: parse_port(fields[4])?,
        })
    }
}

/// An ordered set of rules, sorted by ascending priority.
///
/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    rules: Vec<AclRule>,
}

impl RuleSet {
    /// Builds a set from rules in any order. Fails on duplicate priorities
    /// or duplicate ids.
    pub fn from_rules(mut rules: Vec<AclRule>) -> Result<Self, RuleError> {
        rules.sort_by_key(|r| r.priority);
        for pair in rules.windows(2) {
            if pair[0].priority == pair[1].priority {
                return Err(RuleError::DuplicatePriority(pair[0].priority));
            }
        }
        let mut ids = BTreeSet::new();
        for r in &rules {
            if !ids.insert(r.id) {
                return Err(RuleError::DuplicateId(r.id));
            }
        }
        Ok(RuleSet { rules })
    }

    pub fn rules(&self) -> &[AclRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule_by_id(&self, id: RuleId) -> Option<&AclRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Top-down first match: the lowest-priority-number rule whose five
    /// fields all match the key.
    pub fn classify_linear(&self, key: &FiveTupleKey) -> Option<RuleId> {
        self.rules.iter().find(|r| r.matches(key)).map(|r| r.id)
    }

    /// Serializes to the rule-file grammar with explicit priorities.
    /// `parse_rules` of the output reproduces the set.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                r.priority, r.action, r.proto, r.src, r.dst, r.sport, r.dport
            ));
        }
        out
    }
}

/// Reference classifier; see [`RuleSet::classify_linear`].
pub fn classify_linear(rules: &RuleSet, key: &FiveTupleKey) -> Option<RuleId> {
    rules.classify_linear(key)
}

/// Expands `(address, wildcard_mask)` into disjoint prefixes whose union is
/// exactly the matched address set. Set bits in the mask are free to vary.
///
/// A contiguous low-bit mask yields exactly one prefix. Non-contiguous
/// masks enumerate the scattered free bits, capped by
/// [`DEFAULT_WILDCARD_EXPANSION_LIMIT`].
pub fn wildcard_to_prefixes(address: u32, wildcard_mask: u32) -> Result<Vec<Ipv4Prefix>, RuleError> {
    wildcard_to_prefixes_capped(address, wildcard_mask, DEFAULT_WILDCARD_EXPANSION_LIMIT)
}

/// [`wildcard_to_prefixes`] with an explicit expansion limit.
pub fn wildcard_to_prefixes_capped(
    address: u32,
    wildcard_mask: u32,
    limit: usize,
) -> Result<Vec<Ipv4Prefix>, RuleError> {
    let trailing = wildcard_mask.trailing_ones().min(32);
    let scattered: Vec<u32> = (trailing..32).filter(|&i| wildcard_mask >> i & 1 == 1).collect();
    let needed = 1usize << scattered.len();
    if needed > limit {
        return Err(RuleError::ExpansionOverflow { needed, limit });
    }
    let len = (32 - trailing) as u8;
    let base = address & !wildcard_mask;
    let mut prefixes = Vec::with_capacity(needed);
    for combo in 0..needed as u32 {
        let mut addr = base;
        for (j, bit) in scattered.iter().enumerate() {
            if combo >> j & 1 == 1 {
                addr |= 1 << bit;
            }
        }
        prefixes.push(Ipv4Prefix::new(addr, len).expect("len <= 32"));
    }
    prefixes.sort();
    Ok(prefixes)
}

/// Parses a rule file.
///
/// Grammar, one rule per line, `#` starts a comment:
///
/// ```text
/// [<priority>] <permit|deny|mirror> <proto#|*> <src> <dst> <port|lo-hi|*> <port|lo-hi|*>
/// ```
///
/// where `<src>`/`<dst>` is either `ip/len` or the three tokens
/// `ip wildcard mask`. When a priority is omitted the rule's ordinal
/// times 10 is used. A wildcard field expands into one rule per covering
/// prefix (cartesian over src and dst); the clones take consecutive
/// priorities starting at the line's base priority.
pub fn parse_rules(text: &str) -> Result<RuleSet, ParseError> {
    let mut rules: Vec<AclRule> = Vec::new();
    let mut ordinal = 0u32; // rule lines seen so far

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let syntax = |msg: String| ParseError {
            line: line_no,
            kind: ParseErrorKind::Syntax(msg),
        };
        let rule_err = |e: RuleError| ParseError {
            line: line_no,
            kind: ParseErrorKind::Rule(e),
        };

        let mut pos = 0;
        let explicit_priority = if tokens[0].chars().all(|c| c.is_ascii_digit()) {
            let p = tokens[0]
                .parse::<u32>()
                .map_err(|_| syntax(format!("priority {:?} out of range", tokens[0])))?;
            pos += 1;
            Some(p)
        } else {
            None
        };

        let mut next = |what: &str| -> Result<&str, ParseError> {
            let t = tokens.get(pos).copied();
            pos += 1;
            t.ok_or_else(|| syntax(format!("missing {what}")))
        };

        let action_tok = next("action")?;
        let action: Action = action_tok
            .parse()
            .map_err(|_| syntax(format!("unknown action {action_tok:?}")))?;

        let proto_tok = next("protocol")?;
        let proto = if proto_tok == "*" {
            ProtoMatch::Any
        } else {
            ProtoMatch::Value(
                proto_tok
                    .parse::<u8>()
                    .map_err(|_| syntax(format!("bad protocol {proto_tok:?}")))?,
            )
        };

        // src / dst: `ip/len` (one token) or `ip wildcard mask` (three).
        let mut parse_net = |what: &str, pos: &mut usize| -> Result<Vec<Ipv4Prefix>, ParseError> {
            let t = tokens
                .get(*pos)
                .copied()
                .ok_or_else(|| syntax(format!("missing {what}")))?;
            *pos += 1;
            if tokens.get(*pos).copied() == Some("wildcard") {
                *pos += 1;
                let mask_tok = tokens
                    .get(*pos)
                    .copied()
                    .ok_or_else(|| syntax(format!("missing wildcard mask for {what}")))?;
                *pos += 1;
                let addr: Ipv4Addr = t
                    .parse()
                    .map_err(|_| syntax(format!("bad address {t:?} for {what}")))?;
                let wmask: Ipv4Addr = mask_tok
                    .parse()
                    .map_err(|_| syntax(format!("bad wildcard mask {mask_tok:?} for {what}")))?;
                wildcard_to_prefixes(u32::from(addr), u32::from(wmask)).map_err(rule_err)
            } else if t == "*" {
                Ok(vec![Ipv4Prefix::ANY])
            } else {
                let (addr_s, len_s) = t
                    .split_once('/')
                    .ok_or_else(|| syntax(format!("{what} {t:?} is not ip/len or ip wildcard mask")))?;
                let addr: Ipv4Addr = addr_s
                    .parse()
                    .map_err(|_| syntax(format!("bad address {addr_s:?} for {what}")))?;
                let len = len_s
                    .parse::<u8>()
                    .map_err(|_| syntax(format!("bad prefix length {len_s:?} for {what}")))?;
                Ipv4Prefix::new(u32::from(addr), len)
                    .map(|p| vec![p])
                    .map_err(rule_err)
            }
        };

        let src_prefixes = parse_net("source net", &mut pos)?;
        let dst_prefixes = parse_net("destination net", &mut pos)?;

        let mut parse_ports = |what: &str| -> Result<PortRange, ParseError> {
            let t = next(what)?;
            if t == "*" {
                return Ok(PortRange::FULL);
            }
            if let Some((lo_s, hi_s)) = t.split_once('-') {
                let lo = lo_s
                    .parse::<u16>()
                    .map_err(|_| syntax(format!("bad port {lo_s:?} in {what}")))?;
                let hi = hi_s
                    .parse::<u16>()
                    .map_err(|_| syntax(format!("bad port {hi_s:?} in {what}")))?;
                PortRange::new(lo, hi).map_err(rule_err)
            } else {
                let p = t
                    .parse::<u16>()
                    .map_err(|_| syntax(format!("bad port {t:?} in {what}")))?;
                Ok(PortRange::exact(p))
            }
        };

        let sport = parse_ports("source port")?;
        let dport = parse_ports("destination port")?;

        if pos != tokens.len() {
            return Err(syntax(format!("unexpected trailing token {:?}", tokens[pos])));
        }

        let base_priority = explicit_priority.unwrap_or(ordinal * 10);
        let mut clone_idx = 0u32;
        for src in &src_prefixes {
            for dst in &dst_prefixes {
                rules.push(AclRule {
                    id: RuleId(0), // assigned after the sort below
                    priority: base_priority + clone_idx,
                    proto,
                    src: *src,
                    dst: *dst,
                    sport,
                    dport,
                    action,
                });
                clone_idx += 1;
            }
        }
        ordinal += 1;
    }

    rules.sort_by_key(|r| r.priority);
    for pair in rules.windows(2) {
        if pair[0].priority == pair[1].priority {
            return Err(ParseError {
                line: 0,
                kind: ParseErrorKind::Rule(RuleError::DuplicatePriority(pair[0].priority)),
            });
        }
    }
    for (i, r) in rules.iter_mut().enumerate() {
        r.id = RuleId(i as u32);
    }
    Ok(RuleSet { rules })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(proto: u8, src: [u8; 4], dst: [u8; 4], sport: u16, dport: u16) -> FiveTupleKey {
        FiveTupleKey {
            proto,
            src_addr: u32::from(Ipv4Addr::from(src)),
            dst_addr: u32::from(Ipv4Addr::from(dst)),
            sport,
            dport,
        }
    }

    #[test]
    fn empty_file_parses_to_empty_set() {
        let rs = parse_rules("").unwrap();
        assert_eq!(rs.len(), 0);
        assert_eq!(rs.classify_linear(&key(6, [1, 2, 3, 4], [5, 6, 7, 8], 1, 2)), None);
    }

    #[test]
    fn single_catch_all_rule() {
        let rs = parse_rules("permit * 0.0.0.0/0 0.0.0.0/0 * *").unwrap();
        assert_eq!(rs.len(), 1);
        assert_eq!(rs.rules()[0].priority, 0);
        let id = rs.rules()[0].id;
        assert_eq!(rs.classify_linear(&key(17, [9, 9, 9, 9], [1, 1, 1, 1], 53, 53)), Some(id));
    }

    #[test]
    fn explicit_priorities_sort() {
        let text = "5 permit 6 10.0.0.0/8 0.0.0.0/0 * *\n\
                    1 deny 6 11.0.0.0/8 0.0.0.0/0 * *\n\
                    9 mirror 6 12.0.0.0/8 0.0.0.0/0 * *\n";
        let rs = parse_rules(text).unwrap();
        let prios: Vec<u32> = rs.rules().iter().map(|r| r.priority).collect();
        assert_eq!(prios, vec![1, 5, 9]);
    }

    #[test]
    fn implicit_priorities_are_line_order_times_ten() {
        let text = "permit * 1.0.0.0/8 0.0.0.0/0 * *\n\
                    # comment line\n\
                    \n\
                    deny * 2.0.0.0/8 0.0.0.0/0 * *\n";
        let rs = parse_rules(text).unwrap();
        let prios: Vec<u32> = rs.rules().iter().map(|r| r.priority).collect();
        assert_eq!(prios, vec![0, 10]);
    }

    #[test]
    fn duplicate_explicit_priority_rejected() {
        let text = "3 permit * 1.0.0.0/8 0.0.0.0/0 * *\n\
                    3 deny * 2.0.0.0/8 0.0.0.0/0 * *\n";
        let err = parse_rules(text).unwrap_err();
        assert!(matches!(
            err.kind,
            ParseErrorKind::Rule(RuleError::DuplicatePriority(3))
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_rules("permit * 1.0.0.0/40 0.0.0.0/0 * *").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(matches!(err.kind, ParseErrorKind::Rule(RuleError::PrefixLength(40))));

        let err = parse_rules("\npermit * 1.0.0.0/8 0.0.0.0/0 90-80 *").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(matches!(
            err.kind,
            ParseErrorKind::Rule(RuleError::PortOrder { lo: 90, hi: 80 })
        ));
    }

    #[test]
    fn first_match_wins_over_longer_prefix() {
        // Top-down order, not longest prefix: /8 listed first beats /16.
        let text = "1 permit * 10.0.0.0/8 0.0.0.0/0 * *\n\
                    2 permit * 10.1.0.0/16 0.0.0.0/0 * *\n";
        let rs = parse_rules(text).unwrap();
        let a = rs.rules()[0].id;
        assert_eq!(rs.classify_linear(&key(6, [10, 1, 2, 3], [1, 1, 1, 1], 1, 1)), Some(a));
    }

    #[test]
    fn wildcard_contiguous_mask_single_prefix() {
        let addr = u32::from(Ipv4Addr::new(10, 1, 1, 0));
        let out = wildcard_to_prefixes(addr, u32::from(Ipv4Addr::new(0, 0, 0, 255))).unwrap();
        assert_eq!(out, vec![Ipv4Prefix::new(addr, 24).unwrap()]);
    }

    #[test]
    fn wildcard_zero_mask_is_host_prefix() {
        let addr = u32::from(Ipv4Addr::new(10, 0, 0, 0));
        let out = wildcard_to_prefixes(addr, 0).unwrap();
        assert_eq!(out, vec![Ipv4Prefix::new(addr, 32).unwrap()]);
    }

    #[test]
    fn wildcard_non_contiguous_mask_expands() {
        // 0.0.2.255 frees the low byte plus bit 9: two /24 prefixes.
        let addr = u32::from(Ipv4Addr::new(10, 0, 0, 0));
        let wmask = u32::from(Ipv4Addr::new(0, 0, 2, 255));
        let out = wildcard_to_prefixes(addr, wmask).unwrap();
        assert_eq!(
            out,
            vec![
                Ipv4Prefix::new(u32::from(Ipv4Addr::new(10, 0, 0, 0)), 24).unwrap(),
                Ipv4Prefix::new(u32::from(Ipv4Addr::new(10, 0, 2, 0)), 24).unwrap(),
            ]
        );

        // Brute-force membership oracle: every address matching the
        // wildcard lands in exactly one returned prefix, and prefix
        // membership implies wildcard membership.
        let matches_wildcard = |a: u32| a & !wmask == addr & !wmask;
        let mut covered = std::collections::HashSet::new();
        for p in &out {
            for a in p.first()..=p.last() {
                assert!(matches_wildcard(a), "{a:#x} in {p} does not match wildcard");
                assert!(covered.insert(a), "{a:#x} covered twice");
            }
        }
        assert_eq!(covered.len(), 1usize << wmask.count_ones());
    }

    #[test]
    fn wildcard_expansion_overflow_guard() {
        // Nine scattered free bits need 512 prefixes, over the default cap.
        let wmask = 0b1_0101_0101_0100_0000u32 << 8;
        assert_eq!(wmask.count_ones(), 5);
        let wide = 0xAAAA_0000u32; // 8 scattered bits, no trailing block
        let err = wildcard_to_prefixes_capped(0, wide, 255).unwrap_err();
        assert!(matches!(err, RuleError::ExpansionOverflow { needed: 256, limit: 255 }));
        assert_eq!(wildcard_to_prefixes_capped(0, wide, 256).unwrap().len(), 256);
    }

    #[test]
    fn wildcard_rule_line_expands_into_clones() {
        let text = "100 permit * 10.0.0.0 wildcard 0.0.2.255 0.0.0.0/0 * *\n";
        let rs = parse_rules(text).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs.rules()[0].priority, 100);
        assert_eq!(rs.rules()[1].priority, 101);
        assert_eq!(rs.rules()[0].src, Ipv4Prefix::new(u32::from(Ipv4Addr::new(10, 0, 0, 0)), 24).unwrap());
    }

    #[test]
    fn serialize_round_trip() {
        let text = "5 permit 6 10.0.0.0/8 1.2.3.4/32 80 1000-2000\n\
                    1 deny * 0.0.0.0/0 0.0.0.0/0 * 53\n\
                    9 mirror 17 172.16.0.0/12 192.168.0.0/16 * *\n";
        let rs = parse_rules(text).unwrap();
        let rs2 = parse_rules(&rs.to_file_string()).unwrap();
        assert_eq!(rs, rs2);
    }

    #[test]
    fn from_rules_rejects_duplicates() {
        let r = AclRule {
            id: RuleId(0),
            priority: 1,
            proto: ProtoMatch::Any,
            src: Ipv4Prefix::ANY,
            dst: Ipv4Prefix::ANY,
            sport: PortRange::FULL,
            dport: PortRange::FULL,
            action: Action::Permit,
        };
        let mut r2 = r.clone();
        r2.id = RuleId(1);
        assert!(matches!(
            RuleSet::from_rules(vec![r.clone(), r2]),
            Err(RuleError::DuplicatePriority(1))
        ));
        let mut r3 = r.clone();
        r3.priority = 2;
        assert!(matches!(
            RuleSet::from_rules(vec![r, r3]),
            Err(RuleError::DuplicateId(RuleId(0)))
        ));
    }

    #[test]
    fn key_csv_round_trip() {
        let k: FiveTupleKey = "6,10.0.0.1,192.168.1.2,1234,80".parse().unwrap();
        assert_eq!(k.proto, 6);
        assert_eq!(k.sport, 1234);
        assert_eq!(k.to_string().parse::<FiveTupleKey>().unwrap(), k);
    }
}
