//! `--config FILE`: flat `key = value` lines expanded into flags placed
//! before the command-line flags, so explicit flags win.

use std::fs;

use crate::error::CliError;

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`, got `{raw}`", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("config line {}: invalid key `{}`", i + 1, key)));
        }
        out.push((key, value.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

fn to_flags(pairs: Vec<(String, String)>) -> Vec<String> {
    let mut flags = Vec::new();
    for (key, value) in pairs {
        match value.as_str() {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            _ => {
                flags.push(format!("--{key}"));
                flags.push(value);
            }
        }
    }
    flags
}

/// Removes `--config FILE` from `argv` and splices the file's flags in right
/// after the subcommand name.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            path = Some(it.next().ok_or_else(|| CliError::Usage("--config needs a file".into()))?);
        } else if let Some(p) = arg.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
    let flags = to_flags(parse_config(&text)?);
    let at = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 2).unwrap_or(rest.len());
    rest.splice(at..at, flags);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn parses_pairs_and_comments() {
        let pairs = parse_config("# run\nout_prefix = run1\nrank=5  # low\n\ndeterministic = true\n").unwrap();
        assert_eq!(
            pairs,
            vec![
                ("out-prefix".into(), "run1".into()),
                ("rank".into(), "5".into()),
                ("deterministic".into(), "true".into())
            ]
        );
        assert!(parse_config("rank 5").is_err());
    }

    #[test]
    fn file_flags_precede_command_line_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        fs::write(&cfg, "rank = 5\nparallel = false\ndeterministic = true\n").unwrap();
        let expanded = expand_config(argv(&format!("lrgw solve --config {} --rank 7", cfg.display()))).unwrap();
        assert_eq!(expanded, argv("lrgw solve --rank 5 --deterministic --rank 7"));
        assert_eq!(expand_config(argv("lrgw gen --n 3")).unwrap(), argv("lrgw gen --n 3"));
    }
}
