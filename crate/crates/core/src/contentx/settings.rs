//! Platform settings files: flat `<setting name=".." value=".."/>` elements.

use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};

use super::ContentError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SettingsFile {
    /// Key → value in first-seen key order; `None` for settings without a
    /// value attribute.
    pub settings: Vec<(String, Option<String>)>,
    /// Keys that occurred more than once (the last value was kept).
    pub duplicate_keys: Vec<String>,
}

fn setting_attrs(e: &BytesStart<'_>, offset: u64) -> Result<(Option<String>, Option<String>), ContentError> {
    let mut name = None;
    let mut value = None;
    for attr in e.attributes() {
        let attr = attr.map_err(|err| ContentError::Xml {
            offset,
            message: err.to_string(),
        })?;
        let text = attr
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|err| ContentError::Xml {
                offset,
                message: err.to_string(),
            })?
            .into_owned();
        match AsRef::<str>::as_ref(&attr.key) {
            "name" => name = Some(text),
            "value" => value = Some(text),
            _ => {}
        }
    }
    Ok((name, value))
}

pub fn parse_settings_xml(file: &[u8]) -> Result<SettingsFile, ContentError> {
    let mut reader = Reader::from_reader(file);
    reader.config_mut().check_end_names = true;
    let mut out = SettingsFile::default();
    let mut depth = 0usize;
    let mut seen_root = false;
    loop {
        let offset = reader.buffer_position();
        let event = reader.read_event().map_err(|err| ContentError::Xml {
            offset: reader.error_position(),
            message: err.to_string(),
        })?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let is_empty = matches!(event, Event::Empty(_));
                if depth == 0 {
                    if seen_root {
                        return Err(ContentError::Xml {
                            offset,
                            message: "more than one root element".into(),
                        });
                    }
                    seen_root = true;
                }
                if AsRef::<str>::as_ref(&e.name()) == "setting" {
                    let (name, value) = setting_attrs(e, offset)?;
                    let name = name.ok_or_else(|| ContentError::Xml {
                        offset,
                        message: "setting element without a name".into(),
                    })?;
                    if let Some(slot) = out.settings.iter_mut().find(|(k, _)| *k == name) {
                        log::warn!("duplicate setting {name:?}, keeping the last value");
                        out.duplicate_keys.push(name);
                        slot.1 = value;
                    } else {
                        out.settings.push((name, value));
                    }
                }
                if !is_empty {
                    depth += 1;
                }
            }
            Event::End(_) => depth = depth.saturating_sub(1),
            Event::Eof => {
                if depth != 0 {
                    return Err(ContentError::Xml {
                        offset: reader.buffer_position(),
                        message: "unexpected end of document".into(),
                    });
                }
                break;
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Renders settings in the platform file shape.
pub fn write_settings_xml(settings: &[(String, Option<String>)]) -> Vec<u8> {
    use quick_xml::escape::escape;
    let mut out = String::from("<?xml version='1.0' encoding='UTF-8' standalone='yes' ?>\n<settings version=\"-1\">\n");
    for (i, (key, value)) in settings.iter().enumerate() {
        out.push_str(&format!("  <setting id=\"{}\" name=\"{}\"", i + 1, escape(key.as_str())));
        if let Some(v) = value {
            out.push_str(&format!(" value=\"{}\"", escape(v.as_str())));
        }
        out.push_str(" package=\"android\" defaultSysSet=\"true\" />\n");
    }
    out.push_str("</settings>\n");
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_settings() {
        let f = parse_settings_xml(b"<settings version=\"1\"></settings>").unwrap();
        assert!(f.settings.is_empty());
    }

    #[test]
    fn round_trip_with_escapes() {
        let settings = vec![
            ("adb_enabled".to_string(), Some("1".to_string())),
            ("name".to_string(), Some("a<b & \"c\"".to_string())),
            ("unset".to_string(), None),
        ];
        let f = parse_settings_xml(&write_settings_xml(&settings)).unwrap();
        assert_eq!(f.settings, settings);
    }

    #[test]
    fn duplicate_key_last_wins() {
        let xml = br#"<settings><setting name="a" value="1"/><setting name="a" value="2"/></settings>"#;
        let f = parse_settings_xml(xml).unwrap();
        assert_eq!(f.settings, vec![("a".to_string(), Some("2".to_string()))]);
        assert_eq!(f.duplicate_keys, ["a"]);
    }

    #[test]
    fn malformed_reports_offset() {
        let xml = b"<settings><setting name=\"a\" value=\"1\"/></setings>";
        match parse_settings_xml(xml) {
            Err(ContentError::Xml { offset, .. }) => assert!(offset > 0 && offset <= xml.len() as u64),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_settings_xml(b"<settings><setting").is_err());
    }
}
