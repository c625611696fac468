//! Just enough `CREATE TABLE` parsing to name the columns of a record.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDef {
    pub name: String,
    pub decl_type: String,
    /// `INTEGER PRIMARY KEY` columns alias the rowid and are stored as NULL.
    pub rowid_alias: bool,
}

impl ColumnDef {
    /// Column affinity is REAL: integral reals are stored as integers on
    /// disk and must be read back as reals.
    pub fn real_affinity(&self) -> bool {
        let t = self.decl_type.to_ascii_uppercase();
        !t.contains("INT")
            && !t.contains("CHAR")
            && !t.contains("CLOB")
            && !t.contains("TEXT")
            && !t.contains("BLOB")
            && !t.is_empty()
            && (t.contains("REAL") || t.contains("FLOA") || t.contains("DOUB"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDef {
    pub columns: Vec<ColumnDef>,
    pub without_rowid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Quoted(String),
    Str(String),
    Punct(char),
}

fn tokenize(sql: &str) -> Option<Vec<Tok>> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                i += 1;
            }
            i += 2;
        } else if matches!(c, '"' | '`' | '\'' | '[') {
            let close = if c == '[' { ']' } else { c };
            let mut text = String::new();
            i += 1;
            loop {
                let ch = *chars.get(i)?;
                if ch == close {
                    // doubled quote escapes itself, except inside [...]
                    if close != ']' && chars.get(i + 1) == Some(&close) {
                        text.push(close);
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                text.push(ch);
                i += 1;
            }
            out.push(if c == '\'' { Tok::Str(text) } else { Tok::Quoted(text) });
        } else if c.is_alphanumeric() || c == '_' || c == '$' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            out.push(Tok::Word(chars[start..i].iter().collect()));
        } else {
            out.push(Tok::Punct(c));
            i += 1;
        }
    }
    Some(out)
}

fn is_kw(tok: &Tok, kw: &str) -> bool {
    matches!(tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
}

fn ident(tok: &Tok) -> Option<String> {
    match tok {
        Tok::Word(w) | Tok::Quoted(w) | Tok::Str(w) => Some(w.clone()),
        Tok::Punct(_) => None,
    }
}

const COLUMN_CONSTRAINT_KEYWORDS: [&str; 11] = [
    "CONSTRAINT",
    "PRIMARY",
    "NOT",
    "NULL",
    "UNIQUE",
    "CHECK",
    "DEFAULT",
    "COLLATE",
    "REFERENCES",
    "GENERATED",
    "AS",
];

const TABLE_CONSTRAINT_KEYWORDS: [&str; 5] = ["CONSTRAINT", "PRIMARY", "UNIQUE", "CHECK", "FOREIGN"];

/// Parses the column list of a `CREATE TABLE` statement. Returns `None`
/// for statements without a column list (`CREATE TABLE ... AS SELECT`).
pub fn parse_create_table(sql: &str) -> Option<TableDef> {
    let toks = tokenize(sql)?;
    let open = toks.iter().position(|t| *t == Tok::Punct('('))?;
    if toks[..open].iter().any(|t| is_kw(t, "AS")) {
        return None;
    }

    // split the parenthesised body on top-level commas
    let mut depth = 0usize;
    let mut defs: Vec<Vec<Tok>> = vec![Vec::new()];
    let mut close = None;
    for (idx, tok) in toks.iter().enumerate().skip(open + 1) {
        match tok {
            Tok::Punct('(') => {
                depth += 1;
                defs.last_mut().unwrap().push(tok.clone());
            }
            Tok::Punct(')') if depth == 0 => {
                close = Some(idx);
                break;
            }
            Tok::Punct(')') => {
                depth -= 1;
                defs.last_mut().unwrap().push(tok.clone());
            }
            Tok::Punct(',') if depth == 0 => defs.push(Vec::new()),
            _ => defs.last_mut().unwrap().push(tok.clone()),
        }
    }
    let close = close?;
    let tail = &toks[close + 1..];
    let without_rowid = tail.windows(2).any(|w| is_kw(&w[0], "WITHOUT") && is_kw(&w[1], "ROWID"));

    let mut columns = Vec::new();
    let mut table_pk: Option<Vec<String>> = None;
    for def in defs.into_iter().filter(|d| !d.is_empty()) {
        let first = &def[0];
        if TABLE_CONSTRAINT_KEYWORDS.iter().any(|kw| is_kw(first, kw)) {
            let pk_at = def
                .windows(2)
                .position(|w| is_kw(&w[0], "PRIMARY") && is_kw(&w[1], "KEY"));
            if let Some(at) = pk_at {
                let names: Vec<String> = def[at + 2..]
                    .iter()
                    .skip_while(|t| **t != Tok::Punct('('))
                    .skip(1)
                    .take_while(|t| **t != Tok::Punct(')'))
                    .filter(|t| !matches!(t, Tok::Punct(_)))
                    .filter(|t| !is_kw(t, "ASC") && !is_kw(t, "DESC") && !is_kw(t, "COLLATE"))
                    .filter_map(ident)
                    .collect();
                table_pk = Some(names);
            }
            continue;
        }
        let name = ident(first)?;
        let mut type_words = Vec::new();
        let mut rest_at = def.len();
        let mut paren_depth = 0;
        for (i, tok) in def.iter().enumerate().skip(1) {
            if paren_depth == 0 && COLUMN_CONSTRAINT_KEYWORDS.iter().any(|kw| is_kw(tok, kw)) {
                rest_at = i;
                break;
            }
            match tok {
                Tok::Punct('(') => paren_depth += 1,
                Tok::Punct(')') => paren_depth -= 1,
                _ => {}
            }
            if paren_depth == 0 {
                if let Some(w) = ident(tok) {
                    type_words.push(w);
                }
            }
        }
        let decl_type = type_words.join(" ");
        let constraints = &def[rest_at..];
        let pk = constraints
            .windows(2)
            .position(|w| is_kw(&w[0], "PRIMARY") && is_kw(&w[1], "KEY"));
        let descending = pk.is_some_and(|at| constraints.get(at + 2).is_some_and(|t| is_kw(t, "DESC")));
        let rowid_alias = pk.is_some() && !descending && decl_type.eq_ignore_ascii_case("INTEGER");
        columns.push(ColumnDef {
            name,
            decl_type,
            rowid_alias,
        });
    }

    if let Some(pk) = table_pk {
        if pk.len() == 1 {
            if let Some(col) = columns.iter_mut().find(|c| c.name.eq_ignore_ascii_case(&pk[0])) {
                if col.decl_type.eq_ignore_ascii_case("INTEGER") {
                    col.rowid_alias = true;
                }
            }
        }
    }
    if without_rowid {
        for c in &mut columns {
            c.rowid_alias = false;
        }
    }
    Some(TableDef { columns, without_rowid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(def: &TableDef) -> Vec<&str> {
        def.columns.iter().map(|c| c.name.as_str()).collect()
    }

    #[test]
    fn simple_table() {
        let d = parse_create_table("CREATE TABLE t(a, b TEXT, c INTEGER NOT NULL DEFAULT 0)").unwrap();
        assert_eq!(names(&d), ["a", "b", "c"]);
        assert!(d.columns.iter().all(|c| !c.rowid_alias));
        assert!(!d.without_rowid);
    }

    #[test]
    fn integer_primary_key_aliases_rowid() {
        let d = parse_create_table(
            "CREATE TABLE sms (_id INTEGER PRIMARY KEY AUTOINCREMENT, thread_id INTEGER, address TEXT)",
        )
        .unwrap();
        assert!(d.columns[0].rowid_alias);
        assert!(!d.columns[1].rowid_alias);
    }

    #[test]
    fn int_primary_key_is_not_an_alias() {
        let d = parse_create_table("CREATE TABLE t(id INT PRIMARY KEY, v)").unwrap();
        assert!(!d.columns[0].rowid_alias);
        let d = parse_create_table("CREATE TABLE t(id INTEGER PRIMARY KEY DESC, v)").unwrap();
        assert!(!d.columns[0].rowid_alias);
    }

    #[test]
    fn table_level_primary_key() {
        let d = parse_create_table("CREATE TABLE t(id INTEGER, v TEXT, PRIMARY KEY(id))").unwrap();
        assert_eq!(names(&d), ["id", "v"]);
        assert!(d.columns[0].rowid_alias);
        let d = parse_create_table("CREATE TABLE t(a INTEGER, b, PRIMARY KEY(a, b))").unwrap();
        assert!(!d.columns[0].rowid_alias);
    }

    #[test]
    fn quoted_names_types_with_parens_and_comments() {
        let d = parse_create_table(
            "CREATE TABLE \"my (table)\" ( -- comment\n [first col] VARCHAR(10, 2), `b``q` /* c, d */ BLOB, 'x' , CONSTRAINT u UNIQUE (b) )",
        )
        .unwrap();
        assert_eq!(names(&d), ["first col", "b`q", "x"]);
        assert_eq!(d.columns[0].decl_type, "VARCHAR");
    }

    #[test]
    fn without_rowid() {
        let d = parse_create_table("CREATE TABLE kv(k TEXT PRIMARY KEY, v BLOB) WITHOUT ROWID").unwrap();
        assert!(d.without_rowid);
    }

    #[test]
    fn create_as_select_has_no_columns() {
        assert!(parse_create_table("CREATE TABLE t AS SELECT 1").is_none());
    }
}
