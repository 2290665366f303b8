//! Flat `key=value` views of configuration structs, shared by the config
//! file loader and model checkpoints.

use std::str::FromStr;

use crate::error::{Error, Result};

pub trait Settings {
    /// Every key with its current value, in a stable order.
    fn entries(&self) -> Vec<(&'static str, String)>;

    /// Sets one key from its text form.
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    fn keys(&self) -> Vec<&'static str> {
        self.entries().into_iter().map(|(k, _)| k).collect()
    }
}

pub fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config {
        key: key.to_string(),
        message: format!("cannot parse `{value}` as {}", short_type_name::<T>()),
    })
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::Config {
            key: key.to_string(),
            message: format!("expected true or false, got `{other}`"),
        }),
    }
}

/// Comma-separated list; the empty string is the empty list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

pub fn join_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn unknown_key(key: &str) -> Error {
    Error::Config {
        key: key.to_string(),
        message: "unknown key".into(),
    }
}

fn short_type_name<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    full.rsplit("::").next().unwrap_or(full)
}
