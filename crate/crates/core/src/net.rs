//! Outbound HTTP with a connection guard.
//!
//! Every destination address passes through [`admit`] before a socket is
//! opened: domain names are resolved by [`GuardedResolver`], IP literals are
//! checked up front. In offline mode anything other than a loopback address is
//! refused. Process-wide counters record what was admitted or refused so tests
//! can assert that no outbound connection was ever attempted.

use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use reqwest::dns::{Addrs, Name, Resolve, Resolving};
use thiserror::Error;
use url::{Host, Url};

static OUTBOUND_ATTEMPTS: AtomicU64 = AtomicU64::new(0);
static LOOPBACK_CONNECTS: AtomicU64 = AtomicU64::new(0);
static BLOCKED: AtomicU64 = AtomicU64::new(0);
static OUTBOUND_CONNECTS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NetStats {
    /// Destinations outside the loopback range, whether refused or not.
    pub outbound_attempts: u64,
    /// Non-loopback destinations admitted for connection.
    pub outbound_connects: u64,
    pub loopback_connects: u64,
    pub blocked: u64,
}

pub fn stats() -> NetStats {
    NetStats {
        outbound_attempts: OUTBOUND_ATTEMPTS.load(Ordering::SeqCst),
        outbound_connects: OUTBOUND_CONNECTS.load(Ordering::SeqCst),
        loopback_connects: LOOPBACK_CONNECTS.load(Ordering::SeqCst),
        blocked: BLOCKED.load(Ordering::SeqCst),
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("offline mode refuses connection to {0}")]
    Offline(String),
    #[error("invalid url '{0}'")]
    InvalidUrl(String),
    #[error("http transport error: {0}")]
    Transport(String),
}

fn is_loopback(ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => v4.is_loopback(),
        IpAddr::V6(v6) => v6.is_loopback() || v6.to_ipv4_mapped().is_some_and(|v4| v4.is_loopback()),
    }
}

/// Records and polices one destination address.
fn admit(ip: IpAddr, offline: bool) -> Result<(), NetError> {
    if is_loopback(ip) {
        LOOPBACK_CONNECTS.fetch_add(1, Ordering::SeqCst);
        return Ok(());
    }
    OUTBOUND_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
    if offline {
        BLOCKED.fetch_add(1, Ordering::SeqCst);
        return Err(NetError::Offline(ip.to_string()));
    }
    OUTBOUND_CONNECTS.fetch_add(1, Ordering::SeqCst);
    Ok(())
}

fn is_local_name(host: &str) -> bool {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    host == "localhost" || host.ends_with(".localhost")
}

#[derive(Debug, Clone, Copy)]
struct GuardedResolver {
    offline: bool,
}

impl Resolve for GuardedResolver {
    fn resolve(&self, name: Name) -> Resolving {
        let offline = self.offline;
        let host = name.as_str().to_owned();
        Box::pin(async move {
            // offline, only local names may reach the system resolver
            if offline && !is_local_name(&host) {
                OUTBOUND_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
                BLOCKED.fetch_add(1, Ordering::SeqCst);
                let err: Box<dyn std::error::Error + Send + Sync> = Box::new(NetError::Offline(host));
                return Err(err);
            }
            let resolved: Vec<SocketAddr> = tokio::net::lookup_host((host.as_str(), 0)).await?.collect();
            let mut admitted = Vec::with_capacity(resolved.len());
            for addr in resolved {
                match admit(addr.ip(), offline) {
                    Ok(()) => admitted.push(addr),
                    Err(e) if admitted.is_empty() && offline => {
                        tracing::debug!("{e}");
                    }
                    Err(_) => {}
                }
            }
            if admitted.is_empty() {
                let err: Box<dyn std::error::Error + Send + Sync> = Box::new(NetError::Offline(host));
                return Err(err);
            }
            let addrs: Addrs = Box::new(admitted.into_iter());
            Ok(addrs)
        })
    }
}

/// HTTP client whose every connection is checked by the guard.
#[derive(Debug, Clone)]
pub struct NetClient {
    client: reqwest::Client,
    offline: bool,
}

impl NetClient {
    pub fn new(offline: bool) -> Self {
        let client = reqwest::Client::builder()
            .no_proxy()
            .dns_resolver(std::sync::Arc::new(GuardedResolver { offline }))
            .connect_timeout(Duration::from_secs(5))
            .timeout(Duration::from_secs(60))
            .build()
            .expect("http client builds");
        Self { client, offline }
    }

    pub fn offline(&self) -> bool {
        self.offline
    }

    /// Checks the URL's host when it is an IP literal; names are checked at
    /// resolution time.
    pub fn preflight(&self, url: &str) -> Result<Url, NetError> {
        let parsed = Url::parse(url).map_err(|_| NetError::InvalidUrl(url.to_owned()))?;
        match parsed.host() {
            Some(Host::Ipv4(ip)) => admit(IpAddr::V4(ip), self.offline)?,
            Some(Host::Ipv6(ip)) => admit(IpAddr::V6(ip), self.offline)?,
            Some(Host::Domain(_)) => {}
            None => return Err(NetError::InvalidUrl(url.to_owned())),
        }
        Ok(parsed)
    }

    pub fn request(&self, method: reqwest::Method, url: &str) -> Result<reqwest::RequestBuilder, NetError> {
        let parsed = self.preflight(url)?;
        Ok(self.client.request(method, parsed))
    }
}

impl Default for NetClient {
    fn default() -> Self {
        Self::new(false)
    }
}
