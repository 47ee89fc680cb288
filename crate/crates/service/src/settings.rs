//! Process settings read from the environment.

use std::net::SocketAddr;
use std::path::PathBuf;

pub const ENV_DATA_DIR: &str = "MINDOS_DATA_DIR";
pub const ENV_BIND: &str = "MINDOS_BIND";
pub const ENV_OFFLINE: &str = "MINDOS_OFFLINE";
/// Scripted-provider rules file (JSON).
pub const ENV_SCRIPT: &str = "MINDOS_SCRIPT";
/// Completion endpoint for an HTTP model; takes precedence over the script.
pub const ENV_MODEL_URL: &str = "MINDOS_MODEL_URL";
/// Live backend for the `web_search` built-in.
pub const ENV_SEARCH_URL: &str = "MINDOS_SEARCH_URL";

pub const DEFAULT_DATA_DIR: &str = "mindos-data";
pub const DEFAULT_BIND: &str = "127.0.0.1:8700";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub bind: SocketAddr,
    pub offline: bool,
    pub script_file: Option<PathBuf>,
    pub model_url: Option<String>,
    pub search_url: Option<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from(DEFAULT_DATA_DIR),
            bind: DEFAULT_BIND.parse().expect("default bind parses"),
            offline: false,
            script_file: None,
            model_url: None,
            search_url: None,
        }
    }
}

fn truthy(value: &str) -> bool {
    matches!(value.trim().to_ascii_lowercase().as_str(), "1" | "true" | "yes" | "on")
}

impl Settings {
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|key| std::env::var(key).ok())
    }

    /// Unset or empty variables keep their defaults.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let get = |key: &str| lookup(key).filter(|v| !v.trim().is_empty());
        let mut settings = Settings::default();
        if let Some(dir) = get(ENV_DATA_DIR) {
            settings.data_dir = PathBuf::from(dir);
        }
        if let Some(bind) = get(ENV_BIND) {
            settings.bind = bind
                .parse()
                .map_err(|_| format!("{ENV_BIND}: '{bind}' is not a socket address"))?;
        }
        if let Some(flag) = get(ENV_OFFLINE) {
            settings.offline = truthy(&flag);
        }
        settings.script_file = get(ENV_SCRIPT).map(PathBuf::from);
        settings.model_url = get(ENV_MODEL_URL);
        settings.search_url = get(ENV_SEARCH_URL);
        Ok(settings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults_and_overrides() {
        assert_eq!(Settings::from_lookup(|_| None).unwrap(), Settings::default());
        let env: HashMap<&str, &str> = HashMap::from([
            (ENV_DATA_DIR, "/tmp/x"),
            (ENV_BIND, "0.0.0.0:9000"),
            (ENV_OFFLINE, "TRUE"),
            (ENV_SCRIPT, ""),
        ]);
        let settings = Settings::from_lookup(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(settings.data_dir, PathBuf::from("/tmp/x"));
        assert_eq!(settings.bind.port(), 9000);
        assert!(settings.offline);
        assert_eq!(settings.script_file, None);
        assert!(Settings::from_lookup(|k| (k == ENV_BIND).then(|| "nope".into())).is_err());
    }
}
