//! Process-point message fabric. Agents and SCADA users exchange data through
//! `point.attribute` values with an ownership table, and post status messages
//! in a small text grammar:
//!
//! ```text
//! message := "ID:" u64 "|User:" user "|Status:" item (";" item)*
//! user    := "operator" | "corps" | "dispatch" | "unit" N
//! item    := "Qbias=" signed-number "CFS" | "BPbias=" number "%"
//!          | alarm | command | "mode=" text | text
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("{writer} may not write {addr}")]
    Forbidden { writer: User, addr: PointAddress },
    #[error("no such attribute {0}")]
    NotFound(PointAddress),
    #[error("message has no status items")]
    EmptyStatus,
    #[error("message id {id} from {user} is not above {last}")]
    IdNotIncreasing { user: User, id: u64, last: u64 },
    #[error("invalid status item: {0}")]
    BadItem(String),
}

fn perr(pos: usize, msg: impl Into<String>) -> BusError {
    BusError::Parse { pos, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum User {
    Operator,
    Corps,
    Dispatch,
    /// 1-based unit number.
    Unit(u8),
}

impl fmt::Display for User {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            User::Operator => f.write_str("operator"),
            User::Corps => f.write_str("corps"),
            User::Dispatch => f.write_str("dispatch"),
            User::Unit(n) => write!(f, "unit{n}"),
        }
    }
}

impl FromStr for User {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "operator" => Ok(User::Operator),
            "corps" => Ok(User::Corps),
            "dispatch" => Ok(User::Dispatch),
            _ => s
                .strip_prefix("unit")
                .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) && !d.starts_with('0'))
                .and_then(|d| d.parse::<u8>().ok())
                .map(User::Unit)
                .ok_or_else(|| perr(0, format!("unknown user {s:?}"))),
        }
    }
}

impl TryFrom<String> for User {
    type Error = BusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<User> for String {
    fn from(u: User) -> String {
        u.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PointAddress {
    pub point: String,
    pub attr: String,
}

impl PointAddress {
    pub fn new(point: impl Into<String>, attr: impl Into<String>) -> Self {
        Self { point: point.into(), attr: attr.into() }
    }
}

impl fmt::Display for PointAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.point, self.attr)
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl FromStr for PointAddress {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dot = s.find('.').ok_or_else(|| perr(0, "missing '.'"))?;
        let (point, attr) = (&s[..dot], &s[dot + 1..]);
        if !valid_name(point) {
            return Err(perr(0, format!("bad point name {point:?}")));
        }
        if !valid_name(attr) {
            return Err(perr(dot + 1, format!("bad attribute name {attr:?}")));
        }
        Ok(Self::new(point, attr))
    }
}

impl TryFrom<String> for PointAddress {
    type Error = BusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PointAddress> for String {
    fn from(a: PointAddress) -> String {
        a.to_string()
    }
}

/// Point names used by the plant.
pub mod points {
    pub const PLANT: &str = "Plant";
    pub const OPERATOR: &str = "Operator";

    pub fn unit_agent(unit: usize) -> String {
        format!("UnitAgent{unit}")
    }

    pub fn agent_enabled_attr(unit: usize) -> String {
        format!("Agent{unit}Enabled")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrValue {
    pub value: Value,
    /// Simulation minute of the write.
    pub timestamp: u64,
    /// Bus-wide write counter at the time of the write.
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProcessPoint {
    pub attributes: BTreeMap<String, AttrValue>,
}

/// `writer` may write `attrs` of `point`; an empty list grants every attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub writer: User,
    pub point: String,
    #[serde(default)]
    pub attrs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermissionTable {
    pub grants: Vec<Grant>,
}

impl PermissionTable {
    /// Each unit agent owns its point; the Corps sets plant flow, dispatch sets
    /// load, the operator switches agents.
    pub fn defaults(n_units: usize) -> Self {
        let mut grants: Vec<Grant> = (1..=n_units)
            .map(|u| Grant { writer: User::Unit(u as u8), point: points::unit_agent(u), attrs: vec![] })
            .collect();
        grants.push(Grant { writer: User::Corps, point: points::PLANT.into(), attrs: vec!["QSP".into()] });
        grants.push(Grant {
            writer: User::Dispatch,
            point: points::PLANT.into(),
            attrs: vec!["LoadTarget".into(), "LoadShed".into()],
        });
        grants.push(Grant {
            writer: User::Operator,
            point: points::OPERATOR.into(),
            attrs: (1..=n_units).map(points::agent_enabled_attr).collect(),
        });
        Self { grants }
    }

    pub fn allows(&self, writer: &User, addr: &PointAddress) -> bool {
        self.grants.iter().any(|g| {
            g.writer == *writer && g.point == addr.point && (g.attrs.is_empty() || g.attrs.contains(&addr.attr))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: u64,
    pub writer: User,
    pub addr: PointAddress,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlarmCode {
    StatorOverTemp,
    StatorNormal,
    Vibration,
    VibrationCleared,
}

impl AlarmCode {
    const ALL: [AlarmCode; 4] =
        [AlarmCode::StatorOverTemp, AlarmCode::StatorNormal, AlarmCode::Vibration, AlarmCode::VibrationCleared];

    pub fn text(self) -> &'static str {
        match self {
            AlarmCode::StatorOverTemp => "stator over temp",
            AlarmCode::StatorNormal => "stator temp normal",
            AlarmCode::Vibration => "vibration trouble",
            AlarmCode::VibrationCleared => "vibration cleared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Command {
    /// Plant flow setpoint, CFS.
    NewQsp(f64),
    /// Plant generation target, MW.
    LoadTarget(f64),
    ClearLoadTarget,
    /// MW.
    LoadShed(f64),
    EnableAgent(u8),
    DisableAgent(u8),
    LoadEject,
}

/// One entry of a message's status list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StatusItem {
    QBias(f64),
    BpBias(f64),
    Alarm(AlarmCode),
    Command(Command),
    Mode(String),
    Note(String),
}

fn check_text(s: &str) -> Result<(), BusError> {
    if s.is_empty() || s.trim() != s || s.contains([';', '|']) {
        return Err(BusError::BadItem(format!("{s:?}")));
    }
    Ok(())
}

impl StatusItem {
    pub fn validate(&self) -> Result<(), BusError> {
        let finite = |v: f64| if v.is_finite() { Ok(()) } else { Err(BusError::BadItem(format!("{v}"))) };
        match self {
            StatusItem::QBias(v) | StatusItem::BpBias(v) => finite(*v),
            StatusItem::Command(Command::NewQsp(v) | Command::LoadTarget(v) | Command::LoadShed(v)) => finite(*v),
            StatusItem::Mode(t) => check_text(t),
            StatusItem::Note(t) => {
                check_text(t)?;
                // a note must not read back as another item kind
                match parse_item(t, 0) {
                    Ok(StatusItem::Note(_)) => Ok(()),
                    _ => Err(BusError::BadItem(format!("note {t:?} is ambiguous"))),
                }
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for StatusItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatusItem::QBias(v) => write!(f, "Qbias={v:+}CFS"),
            StatusItem::BpBias(v) => write!(f, "BPbias={v}%"),
            StatusItem::Alarm(a) => f.write_str(a.text()),
            StatusItem::Command(c) => match c {
                Command::NewQsp(v) => write!(f, "new QSP={v}CFS"),
                Command::LoadTarget(v) => write!(f, "load target={v}MW"),
                Command::ClearLoadTarget => f.write_str("clear load target"),
                Command::LoadShed(v) => write!(f, "load shed={v}MW"),
                Command::EnableAgent(u) => write!(f, "enable agent unit{u}"),
                Command::DisableAgent(u) => write!(f, "disable agent unit{u}"),
                Command::LoadEject => f.write_str("load eject"),
            },
            StatusItem::Mode(m) => write!(f, "mode={m}"),
            StatusItem::Note(t) => f.write_str(t),
        }
    }
}

fn num_with_suffix(s: &str, prefix: &str, suffix: &str, pos: usize) -> Option<Result<f64, BusError>> {
    let body = s.strip_prefix(prefix)?.strip_suffix(suffix)?;
    Some(
        body.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| perr(pos + prefix.len(), format!("bad number {body:?}"))),
    )
}

fn parse_item(s: &str, pos: usize) -> Result<StatusItem, BusError> {
    if s.is_empty() {
        return Err(perr(pos, "empty status item"));
    }
    if let Some(v) = num_with_suffix(s, "Qbias=", "CFS", pos) {
        return v.map(StatusItem::QBias);
    }
    if let Some(v) = num_with_suffix(s, "BPbias=", "%", pos) {
        return v.map(StatusItem::BpBias);
    }
    if let Some(a) = AlarmCode::ALL.into_iter().find(|a| a.text() == s) {
        return Ok(StatusItem::Alarm(a));
    }
    if let Some(v) = num_with_suffix(s, "new QSP=", "CFS", pos) {
        return v.map(|v| StatusItem::Command(Command::NewQsp(v)));
    }
    if let Some(v) = num_with_suffix(s, "load target=", "MW", pos) {
        return v.map(|v| StatusItem::Command(Command::LoadTarget(v)));
    }
    if let Some(v) = num_with_suffix(s, "load shed=", "MW", pos) {
        return v.map(|v| StatusItem::Command(Command::LoadShed(v)));
    }
    let unit_arg = |rest: &str, at: usize| match rest.parse::<User>() {
        Ok(User::Unit(u)) => Ok(u),
        _ => Err(perr(at, format!("expected unit name, found {rest:?}"))),
    };
    if let Some(rest) = s.strip_prefix("enable agent ") {
        return unit_arg(rest, pos + 13).map(|u| StatusItem::Command(Command::EnableAgent(u)));
    }
    if let Some(rest) = s.strip_prefix("disable agent ") {
        return unit_arg(rest, pos + 14).map(|u| StatusItem::Command(Command::DisableAgent(u)));
    }
    match s {
        "clear load target" => return Ok(StatusItem::Command(Command::ClearLoadTarget)),
        "load eject" => return Ok(StatusItem::Command(Command::LoadEject)),
        _ => {}
    }
    if let Some(m) = s.strip_prefix("mode=") {
        check_text(m).map_err(|_| perr(pos + 5, "bad mode text"))?;
        return Ok(StatusItem::Mode(m.to_string()));
    }
    check_text(s).map_err(|_| perr(pos, format!("bad text item {s:?}")))?;
    Ok(StatusItem::Note(s.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: u64,
    pub user: User,
    pub status: Vec<StatusItem>,
}

impl Message {
    pub fn validate(&self) -> Result<(), BusError> {
        if self.status.is_empty() {
            return Err(BusError::EmptyStatus);
        }
        self.status.iter().try_for_each(StatusItem::validate)
    }

    pub fn render(&self) -> String {
        let items: Vec<String> = self.status.iter().map(ToString::to_string).collect();
        format!("ID:{}|User:{}|Status:{}", self.id, self.user, items.join(";"))
    }

    pub fn parse(text: &str) -> Result<Self, BusError> {
        let rest = text.strip_prefix("ID:").ok_or_else(|| perr(0, "expected \"ID:\""))?;
        let bar = rest.find('|').ok_or_else(|| perr(3, "expected '|' after id"))?;
        let id = rest[..bar].parse::<u64>().map_err(|e| perr(3, format!("bad id: {e}")))?;
        let mut pos = 3 + bar + 1;
        let rest = text[pos..].strip_prefix("User:").ok_or_else(|| perr(pos, "expected \"User:\""))?;
        pos += 5;
        let bar = rest.find('|').ok_or_else(|| perr(pos, "expected '|' after user"))?;
        let user = rest[..bar].parse::<User>().map_err(|_| perr(pos, format!("unknown user {:?}", &rest[..bar])))?;
        pos += bar + 1;
        let rest = text[pos..].strip_prefix("Status:").ok_or_else(|| perr(pos, "expected \"Status:\""))?;
        pos += 7;
        if rest.is_empty() {
            return Err(BusError::EmptyStatus);
        }
        let mut status = Vec::new();
        for item in rest.split(';') {
            status.push(parse_item(item, pos)?);
            pos += item.len() + 1;
        }
        Ok(Self { id, user, status })
    }
}

/// In-process point database and message log. Single writer; readers take
/// `&self`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    points: BTreeMap<String, ProcessPoint>,
    perms: PermissionTable,
    audit: Vec<AuditEntry>,
    messages: Vec<Message>,
    next_id: u64,
    last_id: BTreeMap<User, u64>,
    version: u64,
    now: u64,
}

impl Bus {
    pub fn new(perms: PermissionTable) -> Self {
        Self {
            points: BTreeMap::new(),
            perms,
            audit: Vec::new(),
            messages: Vec::new(),
            next_id: 1,
            last_id: BTreeMap::new(),
            version: 0,
            now: 0,
        }
    }

    pub fn set_time(&mut self, minute: u64) {
        self.now = minute;
    }

    pub fn write_attr(&mut self, writer: &User, addr: &PointAddress, value: Value) -> Result<u64, BusError> {
        let accepted = self.perms.allows(writer, addr);
        self.audit.push(AuditEntry { timestamp: self.now, writer: *writer, addr: addr.clone(), accepted });
        if !accepted {
            return Err(BusError::Forbidden { writer: *writer, addr: addr.clone() });
        }
        self.version += 1;
        let v = AttrValue { value, timestamp: self.now, version: self.version };
        self.points.entry(addr.point.clone()).or_default().attributes.insert(addr.attr.clone(), v);
        Ok(self.version)
    }

    pub fn read_attr(&self, addr: &PointAddress) -> Result<&AttrValue, BusError> {
        self.points
            .get(&addr.point)
            .and_then(|p| p.attributes.get(&addr.attr))
            .ok_or_else(|| BusError::NotFound(addr.clone()))
    }

    pub fn read_f64(&self, addr: &PointAddress) -> Option<f64> {
        self.read_attr(addr).ok().and_then(|a| a.value.as_f64())
    }

    /// Posts with the next free id.
    pub fn post(&mut self, user: User, status: Vec<StatusItem>) -> Result<u64, BusError> {
        let m = Message { id: self.next_id, user, status };
        self.post_message(m)
    }

    /// Posts a message carrying its own id, which must exceed every id seen
    /// so far.
    pub fn post_message(&mut self, m: Message) -> Result<u64, BusError> {
        m.validate()?;
        let last = self.next_id - 1;
        let origin_last = self.last_id.get(&m.user).copied().unwrap_or(0);
        if m.id <= last.max(origin_last) {
            return Err(BusError::IdNotIncreasing { user: m.user, id: m.id, last: last.max(origin_last) });
        }
        self.next_id = m.id + 1;
        self.last_id.insert(m.user, m.id);
        let id = m.id;
        self.messages.push(m);
        Ok(id)
    }

    pub fn poll_messages(&self, since_id: u64) -> &[Message] {
        let start = self.messages.partition_point(|m| m.id <= since_id);
        &self.messages[start..]
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn last_message_id(&self) -> u64 {
        self.next_id - 1
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn points(&self) -> &BTreeMap<String, ProcessPoint> {
        &self.points
    }

    pub fn permissions(&self) -> &PermissionTable {
        &self.perms
    }

    /// Text dump of every point, restorable with [`Bus::restore_points`].
    pub fn dump_points(&self) -> String {
        toml::to_string(&self.points).expect("points serialize")
    }

    pub fn restore_points(&mut self, text: &str) -> Result<(), BusError> {
        self.points = toml::from_str(text).map_err(|e| perr(0, e.to_string()))?;
        self.version = self.points.values().flat_map(|p| p.attributes.values()).map(|a| a.version).max().unwrap_or(0);
        Ok(())
    }

    pub fn write_audit_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["timestamp", "writer", "address", "outcome"])?;
        for a in &self.audit {
            let outcome = if a.accepted { "accepted" } else { "rejected" };
            wtr.write_record([a.timestamp.to_string(), a.writer.to_string(), a.addr.to_string(), outcome.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
