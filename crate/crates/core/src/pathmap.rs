//! Maps backup-internal paths onto device filesystem paths.
//!
//! Android `.ab` archives store app data under `apps/<pkg>/<token>/...`
//! and shared storage under `shared/0/...`. iOS backups name every file by
//! a (domain, relative path) pair from `Manifest.db`. Both are translated
//! by a rules table so that Backup entries live in the same namespace as
//! the Pre/Post reference snapshots.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Cursor;
use std::path::Path;

use sha1::{Digest as _, Sha1};
use thiserror::Error;

use crate::model::{Digest, Snapshot};

const BUILTIN_RULES: &str = include_str!("../data/default.rules");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PathMapError {
    #[error("rules line {line}: {message}")]
    Rules { line: usize, message: String },
    #[error("cannot read rules file {path}: {message}")]
    RulesIo { path: String, message: String },
    #[error("malformed iOS domain {0:?}")]
    MalformedDomain(String),
    #[error("backup members {first:?} and {second:?} both map to {target:?}")]
    Collision {
        first: String,
        second: String,
        target: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RulePlatform {
    Android,
    Ios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContainerKind {
    App,
    Group,
    Plugin,
}

impl ContainerKind {
    fn from_placeholder(name: &str) -> Option<Self> {
        match name {
            "app-container" => Some(ContainerKind::App),
            "group-container" => Some(ContainerKind::Group),
            "plugin-container" => Some(ContainerKind::Plugin),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    /// `literal<name>`; an empty name means a plain literal segment.
    Token { literal: String, placeholder: Option<String> },
    Rest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    segments: Vec<Segment>,
}

impl Template {
    fn parse(text: &str, line: usize) -> Result<Self, PathMapError> {
        let err = |message: String| PathMapError::Rules { line, message };
        let parts: Vec<&str> = text.trim_start_matches('/').split('/').collect();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            if *part == "<rest>" {
                if i + 1 != parts.len() {
                    return Err(err(format!("<rest> must be the last segment in {text:?}")));
                }
                segments.push(Segment::Rest);
                continue;
            }
            match part.find('<') {
                None => segments.push(Segment::Token {
                    literal: part.to_string(),
                    placeholder: None,
                }),
                Some(open) => {
                    let name = part[open..]
                        .strip_prefix('<')
                        .and_then(|p| p.strip_suffix('>'))
                        .filter(|n| !n.is_empty() && !n.contains(['<', '>']))
                        .ok_or_else(|| err(format!("bad placeholder in segment {part:?}")))?;
                    segments.push(Segment::Token {
                        literal: part[..open].to_string(),
                        placeholder: Some(name.to_string()),
                    });
                }
            }
        }
        Ok(Template { segments })
    }

    fn placeholders(&self) -> BTreeSet<String> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Token { placeholder, .. } => placeholder.clone(),
                Segment::Rest => Some("rest".to_string()),
            })
            .collect()
    }

    fn matches(&self, path: &str) -> Option<HashMap<String, String>> {
        let parts: Vec<&str> = path.split('/').collect();
        let mut captures = HashMap::new();
        for (i, seg) in self.segments.iter().enumerate() {
            match seg {
                Segment::Rest => {
                    let rest = &parts.get(i..)?;
                    if rest.is_empty() || rest.iter().any(|p| p.is_empty()) {
                        return None;
                    }
                    captures.insert("rest".to_string(), rest.join("/"));
                    return Some(captures);
                }
                Segment::Token { literal, placeholder } => {
                    let part = parts.get(i)?;
                    match placeholder {
                        None if part == literal => {}
                        None => return None,
                        Some(name) => {
                            let value = part.strip_prefix(literal.as_str())?;
                            if value.is_empty() {
                                return None;
                            }
                            captures.insert(name.clone(), value.to_string());
                        }
                    }
                }
            }
        }
        (parts.len() == self.segments.len()).then_some(captures)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Target {
    Path(String),
    KeyValue,
    Ignore,
}

#[derive(Debug, Clone)]
pub struct MappingRule {
    pub platform: RulePlatform,
    pub notes: String,
    pattern: Template,
    target: Target,
}

/// An ordered rule table; the first matching rule wins.
#[derive(Debug, Clone)]
pub struct MappingRules {
    pub version: u32,
    rules: Vec<MappingRule>,
    digest: Digest,
}

fn target_placeholders(target: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = target;
    while let Some(open) = rest.find('<') {
        let Some(close) = rest[open..].find('>') else { break };
        let name = &rest[open + 1..open + close];
        // a container placeholder stands in for the bundle it is resolved from
        if ContainerKind::from_placeholder(name).is_some() {
            out.insert("bundle".to_string());
        } else {
            out.insert(name.to_string());
        }
        rest = &rest[open + close + 1..];
    }
    out
}

impl MappingRules {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_RULES).expect("built-in mapping rules parse")
    }

    pub fn load(path: &Path) -> Result<Self, PathMapError> {
        let text = fs::read_to_string(path).map_err(|e| PathMapError::RulesIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PathMapError> {
        let mut version = None;
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let (body, notes) = match raw.split_once('#') {
                Some((body, notes)) => (body.trim(), notes.trim()),
                None => (raw.trim(), ""),
            };
            if body.is_empty() {
                continue;
            }
            if let Some(v) = body.strip_prefix("version ") {
                let v = v.trim().parse::<u32>().map_err(|_| PathMapError::Rules {
                    line,
                    message: format!("bad version {v:?}"),
                })?;
                if v != 1 {
                    return Err(PathMapError::Rules {
                        line,
                        message: format!("unsupported rules version {v}"),
                    });
                }
                version = Some(v);
                continue;
            }
            let (lhs, rhs) = body.split_once("=>").ok_or_else(|| PathMapError::Rules {
                line,
                message: "expected `<platform> <pattern> => <target>`".into(),
            })?;
            let mut lhs_parts = lhs.split_whitespace();
            let platform = match lhs_parts.next() {
                Some("android") => RulePlatform::Android,
                Some("ios") => RulePlatform::Ios,
                other => {
                    return Err(PathMapError::Rules {
                        line,
                        message: format!("unknown platform {other:?}"),
                    })
                }
            };
            let pattern_text = lhs_parts.next().ok_or_else(|| PathMapError::Rules {
                line,
                message: "missing pattern".into(),
            })?;
            if lhs_parts.next().is_some() {
                return Err(PathMapError::Rules {
                    line,
                    message: "pattern must not contain whitespace".into(),
                });
            }
            let pattern = Template::parse(pattern_text, line)?;
            let rhs = rhs.trim();
            let target = match rhs {
                "@kv" => Target::KeyValue,
                "@ignore" => Target::Ignore,
                t if t.starts_with('@') => {
                    return Err(PathMapError::Rules {
                        line,
                        message: format!("unknown directive {t:?}"),
                    })
                }
                t => {
                    let expected = pattern.placeholders();
                    let got = target_placeholders(t);
                    if expected != got {
                        return Err(PathMapError::Rules {
                            line,
                            message: format!("placeholder mismatch: pattern has {expected:?}, target has {got:?}"),
                        });
                    }
                    Target::Path(t.to_string())
                }
            };
            rules.push(MappingRule {
                platform,
                notes: notes.to_string(),
                pattern,
                target,
            });
        }
        let version = version.ok_or(PathMapError::Rules {
            line: 0,
            message: "missing `version` line".into(),
        })?;
        Ok(MappingRules {
            version,
            rules,
            digest: Digest::of(text.as_bytes()),
        })
    }

    /// Digest of the rules text, recorded in audit logs.
    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn first_match(&self, platform: RulePlatform, path: &str) -> Option<(&MappingRule, HashMap<String, String>)> {
        self.rules
            .iter()
            .filter(|r| r.platform == platform)
            .find_map(|r| r.pattern.matches(path).map(|c| (r, c)))
    }
}

fn expand(target: &str, captures: &HashMap<String, String>, containers: Option<&str>) -> String {
    let mut out = String::with_capacity(target.len() + 32);
    let mut rest = target;
    while let Some(open) = rest.find('<') {
        out.push_str(&rest[..open]);
        let close = rest[open..].find('>').expect("validated template") + open;
        let name = &rest[open + 1..close];
        if ContainerKind::from_placeholder(name).is_some() {
            out.push_str(containers.unwrap_or_default());
        } else {
            out.push_str(captures.get(name).map(String::as_str).unwrap_or_default());
        }
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}

/// Result of mapping one `.ab` tar member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AndroidMapping {
    Device(String),
    /// Key-value backup data; content extraction decodes it.
    KeyValue { package: String, key_path: String },
    /// Backup metadata with no device-side counterpart.
    Ignored,
    Unmapped,
}

pub fn map_android_backup_path(rules: &MappingRules, member: &str) -> AndroidMapping {
    let member = member.trim_start_matches("./").trim_start_matches('/');
    match rules.first_match(RulePlatform::Android, member) {
        None => AndroidMapping::Unmapped,
        Some((rule, captures)) => match &rule.target {
            Target::Ignore => AndroidMapping::Ignored,
            Target::KeyValue => AndroidMapping::KeyValue {
                package: captures.get("pkg").cloned().unwrap_or_default(),
                key_path: captures.get("rest").cloned().unwrap_or_default(),
            },
            Target::Path(t) => AndroidMapping::Device(expand(t, &captures, None)),
        },
    }
}

/// Resolves iOS bundle identifiers to data-container paths.
#[derive(Debug, Clone, Default)]
pub struct ContainerResolver {
    containers: HashMap<(ContainerKind, String), String>,
}

pub const CONTAINER_METADATA_FILE: &str = ".com.apple.mobile_container_manager.metadata.plist";

const CONTAINER_ROOTS: [(&str, ContainerKind); 3] = [
    ("/private/var/mobile/Containers/Data/Application/", ContainerKind::App),
    ("/private/var/mobile/Containers/Shared/AppGroup/", ContainerKind::Group),
    ("/private/var/mobile/Containers/Data/PluginKitPlugin/", ContainerKind::Plugin),
];

impl ContainerResolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kind: ContainerKind, bundle: impl Into<String>, container_path: impl Into<String>) {
        self.containers.insert((kind, bundle.into()), container_path.into());
    }

    pub fn resolve(&self, kind: ContainerKind, bundle: &str) -> Option<&str> {
        self.containers.get(&(kind, bundle.to_string())).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.containers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.containers.is_empty()
    }

    /// Builds a resolver from the container metadata plists found in a
    /// reference snapshot. Unreadable or identifier-less plists are
    /// returned as warnings.
    pub fn from_reference(snapshot: &Snapshot) -> (Self, Vec<String>) {
        let mut resolver = ContainerResolver::new();
        let mut warnings = Vec::new();
        for entry in snapshot.entries() {
            let Some(container) = entry.name.strip_suffix(CONTAINER_METADATA_FILE) else {
                continue;
            };
            let container = container.trim_end_matches('/');
            let Some(kind) = CONTAINER_ROOTS.iter().find_map(|(root, kind)| {
                let uuid = container.strip_prefix(root)?;
                (!uuid.is_empty() && !uuid.contains('/')).then_some(*kind)
            }) else {
                continue;
            };
            let bundle = entry
                .load()
                .map_err(|e| e.to_string())
                .and_then(|bytes| plist::Value::from_reader(Cursor::new(bytes)).map_err(|e| e.to_string()))
                .and_then(|value| {
                    value
                        .as_dictionary()
                        .and_then(|d| d.get("MCMMetadataIdentifier"))
                        .and_then(|v| v.as_string())
                        .map(str::to_string)
                        .ok_or_else(|| "no MCMMetadataIdentifier".to_string())
                });
            match bundle {
                Ok(bundle) => resolver.insert(kind, bundle, container),
                Err(why) => warnings.push(format!("{}: {why}", entry.name)),
            }
        }
        (resolver, warnings)
    }
}

fn check_domain(domain: &str) -> Result<(), PathMapError> {
    let ok = !domain.is_empty()
        && !domain.contains(['/', ':'])
        && !domain.chars().any(|c| c.is_whitespace() || c.is_control());
    if ok {
        Ok(())
    } else {
        Err(PathMapError::MalformedDomain(domain.to_string()))
    }
}

/// Symbolic name used when a domain cannot be placed on the filesystem.
pub fn symbolic_ios_name(domain: &str, relative_path: &str) -> String {
    format!("{domain}:{relative_path}")
}

/// Maps a `Manifest.db` row to a device path.
///
/// Rows whose domain has no rule, or whose container is not known to the
/// resolver, get the symbolic name `<domain>:<relative_path>`.
pub fn map_ios_manifest_row(
    rules: &MappingRules,
    domain: &str,
    relative_path: &str,
    resolver: &ContainerResolver,
) -> Result<String, PathMapError> {
    check_domain(domain)?;
    let joined = format!("{domain}/{relative_path}");
    let symbolic = || symbolic_ios_name(domain, relative_path);
    let Some((rule, captures)) = rules.first_match(RulePlatform::Ios, &joined) else {
        return Ok(symbolic());
    };
    let Target::Path(target) = &rule.target else {
        return Ok(symbolic());
    };
    let container_kind = rule.pattern_container_kind(target);
    let container = match container_kind {
        None => None,
        Some(kind) => {
            let bundle = captures.get("bundle").map(String::as_str).unwrap_or_default();
            match resolver.resolve(kind, bundle) {
                Some(path) => Some(path),
                None => return Ok(symbolic()),
            }
        }
    };
    Ok(expand(target, &captures, container))
}

impl MappingRule {
    fn pattern_container_kind(&self, target: &str) -> Option<ContainerKind> {
        let open = target.find('<')?;
        let close = target[open..].find('>')? + open;
        ContainerKind::from_placeholder(&target[open + 1..close])
    }
}

/// Name of the blob file holding a backed-up file: the SHA-1 of
/// `"<domain>-<relative_path>"` in lowercase hex.
pub fn compute_file_id(domain: &str, relative_path: &str) -> String {
    let mut hasher = Sha1::new();
    hasher.update(domain.as_bytes());
    hasher.update(b"-");
    hasher.update(relative_path.as_bytes());
    hex::encode(hasher.finalize())
}

/// Tracks mapped names and rejects two distinct sources landing on the
/// same target.
#[derive(Debug, Default)]
pub struct InjectivityGuard {
    seen: HashMap<String, String>,
}

impl InjectivityGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, source: &str, target: &str) -> Result<(), PathMapError> {
        match self.seen.get(target) {
            Some(prev) if prev != source => Err(PathMapError::Collision {
                first: prev.clone(),
                second: source.to_string(),
                target: target.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.seen.insert(target.to_string(), source.to_string());
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Entry, EntryKind, Platform, SnapshotLabel};

    fn dev(p: &str) -> AndroidMapping {
        AndroidMapping::Device(p.to_string())
    }

    #[test]
    fn android_token_table() {
        let rules = MappingRules::builtin();
        let cases = [
            ("apps/com.whatsapp/f/log.txt", dev("/data/data/com.whatsapp/files/log.txt")),
            ("apps/com.x/db/msgstore.db", dev("/data/data/com.x/databases/msgstore.db")),
            ("apps/com.x/sp/prefs.xml", dev("/data/data/com.x/shared_prefs/prefs.xml")),
            ("apps/com.x/r/app_webview/a", dev("/data/data/com.x/app_webview/a")),
            ("apps/com.x/c/tmp", dev("/data/data/com.x/cache/tmp")),
            ("apps/com.x/ef/files/a.bin", dev("/data/media/0/Android/data/com.x/files/a.bin")),
            (
                "apps/com.android.providers.telephony/d_f/000000_sms_backup",
                dev("/data/user_de/0/com.android.providers.telephony/files/000000_sms_backup"),
            ),
            ("apps/com.x/d_db/a.db", dev("/data/user_de/0/com.x/databases/a.db")),
            ("apps/com.x/d_sp/a.xml", dev("/data/user_de/0/com.x/shared_prefs/a.xml")),
            ("apps/com.x/d_r/a", dev("/data/user_de/0/com.x/a")),
            ("shared/0/DCIM/img.jpg", dev("/data/media/0/DCIM/img.jpg")),
            ("apps/com.x/_manifest", AndroidMapping::Ignored),
            (
                "apps/com.android.calllogbackup/k/com.android.calllogbackup.data",
                AndroidMapping::KeyValue {
                    package: "com.android.calllogbackup".into(),
                    key_path: "com.android.calllogbackup.data".into(),
                },
            ),
            ("apps/com.x/zz/file", AndroidMapping::Unmapped),
            ("apps/com.x/f", AndroidMapping::Unmapped),
            ("random/thing", AndroidMapping::Unmapped),
        ];
        for (member, expected) in cases {
            assert_eq!(map_android_backup_path(&rules, member), expected, "{member}");
        }
    }

    #[test]
    fn leading_dot_slash_is_ignored() {
        let rules = MappingRules::builtin();
        assert_eq!(
            map_android_backup_path(&rules, "./shared/0/a"),
            dev("/data/media/0/a")
        );
    }

    #[test]
    fn ios_home_domain() {
        let rules = MappingRules::builtin();
        let r = ContainerResolver::new();
        assert_eq!(
            map_ios_manifest_row(&rules, "HomeDomain", "Library/SMS/sms.db", &r).unwrap(),
            "/private/var/mobile/Library/SMS/sms.db"
        );
    }

    #[test]
    fn ios_app_domain_uses_resolver() {
        let rules = MappingRules::builtin();
        let mut r = ContainerResolver::new();
        r.insert(
            ContainerKind::App,
            "net.whatsapp.WhatsApp",
            "/private/var/mobile/Containers/Data/Application/U",
        );
        assert_eq!(
            map_ios_manifest_row(&rules, "AppDomain-net.whatsapp.WhatsApp", "Documents/x", &r).unwrap(),
            "/private/var/mobile/Containers/Data/Application/U/Documents/x"
        );
        // unknown bundle falls back to the symbolic form
        assert_eq!(
            map_ios_manifest_row(&rules, "AppDomain-com.other", "Documents/x", &r).unwrap(),
            "AppDomain-com.other:Documents/x"
        );
    }

    #[test]
    fn ios_unknown_domain_is_symbolic() {
        let rules = MappingRules::builtin();
        assert_eq!(
            map_ios_manifest_row(
                &rules,
                "CameraRollDomain",
                "Media/DCIM/100APPLE/IMG_0001.JPG",
                &ContainerResolver::new()
            )
            .unwrap(),
            "CameraRollDomain:Media/DCIM/100APPLE/IMG_0001.JPG"
        );
    }

    #[test]
    fn ios_malformed_domains() {
        let rules = MappingRules::builtin();
        let r = ContainerResolver::new();
        for bad in ["", "Home Domain", "a:b", "a/b"] {
            assert_eq!(
                map_ios_manifest_row(&rules, bad, "x", &r),
                Err(PathMapError::MalformedDomain(bad.to_string()))
            );
        }
    }

    #[test]
    fn resolver_reads_container_metadata() {
        let mut dict = plist::Dictionary::new();
        dict.insert("MCMMetadataIdentifier".into(), plist::Value::String("com.example.app".into()));
        let mut bytes = Vec::new();
        plist::Value::Dictionary(dict).to_writer_binary(&mut bytes).unwrap();
        let name = format!("/private/var/mobile/Containers/Data/Application/ABC-123/{CONTAINER_METADATA_FILE}");
        let snap = Snapshot::new(
            SnapshotLabel::Pre,
            Platform::Ios,
            1,
            vec![
                Entry::from_bytes(name, EntryKind::FileBased, bytes),
                Entry::from_bytes(
                    format!("/private/var/mobile/Containers/Data/Application/BAD/{CONTAINER_METADATA_FILE}"),
                    EntryKind::FileBased,
                    b"not a plist".to_vec(),
                ),
            ],
        );
        let (resolver, warnings) = ContainerResolver::from_reference(&snap);
        assert_eq!(
            resolver.resolve(ContainerKind::App, "com.example.app"),
            Some("/private/var/mobile/Containers/Data/Application/ABC-123")
        );
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn file_id_known_values() {
        // SHA-1("-")
        assert_eq!(compute_file_id("", ""), "3bc15c8aae3e4124dd409035f32ea2fd6835efc9");
        assert_eq!(
            compute_file_id("HomeDomain", "Library/SMS/sms.db"),
            "3d0d7e5fb2ce288813306e4d4636395e047a3d28"
        );
    }

    #[test]
    fn rules_reject_placeholder_mismatch() {
        let text = "version 1\nandroid apps/<pkg>/f/<rest> => /data/<rest>\n";
        assert!(matches!(MappingRules::parse(text), Err(PathMapError::Rules { line: 2, .. })));
    }

    #[test]
    fn rules_require_version() {
        assert!(MappingRules::parse("android a/<rest> => /<rest>\n").is_err());
    }

    #[test]
    fn custom_rules_override() {
        let text = "version 1\nandroid apps/<pkg>/zz/<rest> => /custom/<pkg>/<rest>\n";
        let rules = MappingRules::parse(text).unwrap();
        assert_eq!(map_android_backup_path(&rules, "apps/p/zz/q"), dev("/custom/p/q"));
        assert_eq!(map_android_backup_path(&rules, "apps/p/f/q"), AndroidMapping::Unmapped);
    }

    #[test]
    fn injectivity_guard() {
        let mut g = InjectivityGuard::new();
        g.record("a", "/x").unwrap();
        g.record("a", "/x").unwrap();
        assert!(matches!(g.record("b", "/x"), Err(PathMapError::Collision { .. })));
    }
}
