//! `key=value` config files. Keys are the long flag names of the chosen
//! subcommand (plus the global flags); values on the command line win.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, ArgMatches, Command};
use sinv_core::{Error, Result};

/// Global options that take a value; needed to find the subcommand token
/// before clap has parsed anything.
const GLOBAL_VALUED: [&str; 3] = ["--seed", "--jobs", "--config"];

pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !seen.insert(k.to_string()) {
            return Err(Error::Config(format!("{}: key {k:?} given twice", path.display())));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Finds `--config` and the subcommand name in raw arguments.
fn scan(argv: &[OsString]) -> (Option<OsString>, Option<usize>) {
    let mut config = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(OsString::from(v));
        } else if GLOBAL_VALUED.contains(&a.as_ref()) {
            if a == "--config" {
                config = argv.get(i + 1).cloned();
            }
            i += 1;
        } else if !a.starts_with('-') {
            return (config, Some(i));
        }
        i += 1;
    }
    (config, None)
}

/// Inserts config-file entries right after the subcommand name so that
/// later command-line occurrences override them.
pub fn expand(command: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let (config, sub_at) = scan(&argv);
    let (Some(config), Some(sub_at)) = (config, sub_at) else {
        return Ok(argv);
    };
    let entries = parse_file(Path::new(&config))?;
    let name = argv[sub_at].to_string_lossy().into_owned();
    let mut command = command.clone();
    command.build();
    let sub = command
        .find_subcommand(&name)
        .ok_or_else(|| Error::Config(format!("unknown subcommand {name:?}")))?;
    let mut injected = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config" && key != "help")
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?} for {name}")))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => injected.push(OsString::from(format!("--{key}"))),
                "false" => {}
                _ => return Err(Error::Config(format!("config key {key:?} expects true or false"))),
            }
        } else {
            injected.push(OsString::from(format!("--{key}")));
            injected.push(OsString::from(value));
        }
    }
    let mut out = argv[..=sub_at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[sub_at + 1..]);
    Ok(out)
}

/// `key=value` lines for every argument of the chosen subcommand, in
/// name order, with the values clap resolved.
pub fn resolved(command: &Command, matches: &ArgMatches) -> String {
    let Some((name, sub_matches)) = matches.subcommand() else {
        return String::new();
    };
    let mut command = command.clone();
    command.build();
    let sub = command.find_subcommand(name).expect("parsed subcommand exists");
    let mut lines: Vec<String> = sub
        .get_arguments()
        .filter(|a| a.get_id() != "help")
        .map(|a| {
            let id = a.get_id().as_str();
            let value = match sub_matches.get_raw(id) {
                Some(vals) => vals
                    .map(|v| v.to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join(","),
                None => String::new(),
            };
            format!("{}={value}", a.get_long().unwrap_or(id))
        })
        .collect();
    lines.sort();
    let mut out = format!("command={name}\n");
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_finds_subcommand_after_globals() {
        let argv: Vec<OsString> = ["sinv", "--seed", "3", "--config", "c.txt", "train", "--lr", "1"]
            .iter()
            .map(OsString::from)
            .collect();
        let (c, at) = scan(&argv);
        assert_eq!(c, Some(OsString::from("c.txt")));
        assert_eq!(at, Some(5));
    }

    #[test]
    fn file_rejects_duplicates_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c");
        std::fs::write(&p, "# comment\nlr = 0.1\n\nbatch-size=4\n").unwrap();
        assert_eq!(
            parse_file(&p).unwrap(),
            vec![("lr".into(), "0.1".into()), ("batch-size".into(), "4".into())]
        );
        std::fs::write(&p, "lr=1\nlr=2\n").unwrap();
        assert!(parse_file(&p).is_err());
        std::fs::write(&p, "lr\n").unwrap();
        assert!(parse_file(&p).is_err());
    }
}
