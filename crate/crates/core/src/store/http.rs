//! S3-compatible object storage over HTTP range requests.
//!
//! Configured from the environment:
//!
//! | variable                   | meaning                                  |
//! |----------------------------|------------------------------------------|
//! | `IOU_S3_ENDPOINT`          | base URL, e.g. `https://s3.amazonaws.com`|
//! | `IOU_S3_BUCKET`            | bucket name (path-style addressing)      |
//! | `IOU_S3_REGION`            | signing region, default `us-east-1`      |
//! | `IOU_S3_ACCESS_KEY_ID`     | access key; requests are unsigned if unset |
//! | `IOU_S3_SECRET_ACCESS_KEY` | secret key                               |

use std::collections::BTreeMap;

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

use super::{check_range, BlobStore, RangeRequest, StoreError};

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credentials {
    pub access_key_id: String,
    pub secret_access_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub bucket: String,
    pub region: String,
    pub credentials: Option<Credentials>,
}

impl HttpConfig {
    pub fn from_env() -> Result<Self, StoreError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let endpoint = var("IOU_S3_ENDPOINT").ok_or_else(|| StoreError::Http("IOU_S3_ENDPOINT is not set".into()))?;
        let bucket = var("IOU_S3_BUCKET").ok_or_else(|| StoreError::Http("IOU_S3_BUCKET is not set".into()))?;
        let credentials = match (var("IOU_S3_ACCESS_KEY_ID"), var("IOU_S3_SECRET_ACCESS_KEY")) {
            (Some(access_key_id), Some(secret_access_key)) => Some(Credentials {
                access_key_id,
                secret_access_key,
            }),
            _ => None,
        };
        Ok(Self {
            endpoint,
            bucket,
            region: var("IOU_S3_REGION").unwrap_or_else(|| "us-east-1".into()),
            credentials,
        })
    }
}

/// Blob store backed by an S3-compatible HTTP endpoint.
pub struct HttpStore {
    config: HttpConfig,
    host: String,
    agent: ureq::Agent,
}

impl HttpStore {
    pub fn new(config: HttpConfig) -> Result<Self, StoreError> {
        let rest = config
            .endpoint
            .split_once("://")
            .map(|(_, r)| r)
            .ok_or_else(|| StoreError::Http(format!("endpoint {:?} has no scheme", config.endpoint)))?;
        let host = rest.split('/').next().unwrap_or_default().to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, host, agent })
    }

    pub fn from_env() -> Result<Self, StoreError> {
        Self::new(HttpConfig::from_env()?)
    }

    fn path(&self, name: &str) -> String {
        format!("/{}/{}", uri_encode(&self.config.bucket, false), uri_encode(name, false))
    }

    fn url(&self, name: &str) -> String {
        format!("{}{}", self.config.endpoint.trim_end_matches('/'), self.path(name))
    }

    /// Headers to attach, signature included when credentials are configured.
    fn headers(&self, method: &str, name: &str, payload: &[u8], range: Option<String>) -> Vec<(String, String)> {
        let mut headers = BTreeMap::new();
        headers.insert("host".to_string(), self.host.clone());
        if let Some(r) = range {
            headers.insert("range".to_string(), r);
        }
        let Some(creds) = &self.config.credentials else {
            headers.remove("host");
            return headers.into_iter().collect();
        };
        let amz_date = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
        let payload_hash = hex::encode(Sha256::digest(payload));
        headers.insert("x-amz-content-sha256".into(), payload_hash.clone());
        headers.insert("x-amz-date".into(), amz_date.clone());
        let auth = authorization(
            creds,
            &SigningInput {
                method,
                path: &self.path(name),
                query: "",
                headers: &headers,
                payload_hash: &payload_hash,
                region: &self.config.region,
                service: "s3",
                amz_date: &amz_date,
            },
        );
        headers.insert("authorization".into(), auth);
        headers.remove("host");
        headers.into_iter().collect()
    }

    fn fail(name: &str, status: u16, op: &str) -> StoreError {
        if status == 404 {
            StoreError::NotFound(name.to_string())
        } else {
            StoreError::Http(format!("{op} {name:?} returned status {status}"))
        }
    }
}

fn http_err(e: ureq::Error) -> StoreError {
    StoreError::Http(e.to_string())
}

impl BlobStore for HttpStore {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let mut req = self.agent.put(&self.url(name));
        for (k, v) in self.headers("PUT", name, bytes, None) {
            req = req.header(k, v);
        }
        let resp = req.send(bytes).map_err(http_err)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(Self::fail(name, status, "PUT"));
        }
        Ok(())
    }

    fn get_range(&self, req: &RangeRequest) -> Result<Vec<u8>, StoreError> {
        let name = &*req.blob_name;
        let end = req.offset + req.length - 1;
        let mut call = self.agent.get(&self.url(name));
        for (k, v) in self.headers("GET", name, b"", Some(format!("bytes={}-{end}", req.offset))) {
            call = call.header(k, v);
        }
        let mut resp = call.call().map_err(http_err)?;
        let status = resp.status().as_u16();
        if status == 416 {
            let size = self.len(name)?;
            check_range(req, size)?;
        }
        if status != 206 && status != 200 {
            return Err(Self::fail(name, status, "GET"));
        }
        let body = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(http_err)?;
        // A server that ignores Range answers 200 with the whole blob.
        let body = if status == 200 {
            check_range(req, body.len() as u64)?;
            body[req.offset as usize..=end as usize].to_vec()
        } else {
            body
        };
        if body.len() as u64 != req.length {
            check_range(req, self.len(name)?)?;
            return Err(StoreError::Http(format!(
                "short read of {name:?}: {} of {} bytes",
                body.len(),
                req.length
            )));
        }
        Ok(body)
    }

    fn get_full(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        let mut call = self.agent.get(&self.url(name));
        for (k, v) in self.headers("GET", name, b"", None) {
            call = call.header(k, v);
        }
        let mut resp = call.call().map_err(http_err)?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Self::fail(name, status, "GET"));
        }
        resp.body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(http_err)
    }

    fn len(&self, name: &str) -> Result<u64, StoreError> {
        let mut call = self.agent.head(&self.url(name));
        for (k, v) in self.headers("HEAD", name, b"", None) {
            call = call.header(k, v);
        }
        let resp = call.call().map_err(http_err)?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(Self::fail(name, status, "HEAD"));
        }
        resp.headers()
            .get("content-length")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| StoreError::Http(format!("HEAD {name:?} returned no content length")))
    }
}

/// Everything that enters an AWS Signature Version 4 signature.
pub struct SigningInput<'a> {
    pub method: &'a str,
    pub path: &'a str,
    pub query: &'a str,
    /// Lower-case names; all of them are signed.
    pub headers: &'a BTreeMap<String, String>,
    pub payload_hash: &'a str,
    pub region: &'a str,
    pub service: &'a str,
    /// `YYYYMMDDTHHMMSSZ`
    pub amz_date: &'a str,
}

pub fn signature(creds: &Credentials, input: &SigningInput<'_>) -> String {
    let signed_headers = input.headers.keys().cloned().collect::<Vec<_>>().join(";");
    let canonical_headers: String = input
        .headers
        .iter()
        .map(|(k, v)| format!("{k}:{}\n", v.trim()))
        .collect();
    let canonical_request = format!(
        "{}\n{}\n{}\n{}\n{}\n{}",
        input.method, input.path, input.query, canonical_headers, signed_headers, input.payload_hash
    );
    let date = &input.amz_date[..8];
    let scope = format!("{date}/{}/{}/aws4_request", input.region, input.service);
    let string_to_sign = format!(
        "AWS4-HMAC-SHA256\n{}\n{scope}\n{}",
        input.amz_date,
        hex::encode(Sha256::digest(canonical_request.as_bytes()))
    );
    let mut key = format!("AWS4{}", creds.secret_access_key).into_bytes();
    for part in [date, input.region, input.service, "aws4_request"] {
        key = hmac(&key, part.as_bytes());
    }
    hex::encode(hmac(&key, string_to_sign.as_bytes()))
}

pub fn authorization(creds: &Credentials, input: &SigningInput<'_>) -> String {
    let signed_headers = input.headers.keys().cloned().collect::<Vec<_>>().join(";");
    format!(
        "AWS4-HMAC-SHA256 Credential={}/{}/{}/{}/aws4_request, SignedHeaders={signed_headers}, Signature={}",
        creds.access_key_id,
        &input.amz_date[..8],
        input.region,
        input.service,
        signature(creds, input)
    )
}

fn hmac(key: &[u8], msg: &[u8]) -> Vec<u8> {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(msg);
    mac.finalize().into_bytes().to_vec()
}

fn uri_encode(s: &str, encode_slash: bool) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            b'/' if !encode_slash => out.push('/'),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    #[test]
    fn signature_matches_published_example() {
        // "get-vanilla" case of the AWS Signature Version 4 test suite.
        let creds = Credentials {
            access_key_id: "AKIDEXAMPLE".into(),
            secret_access_key: "wJalrXUtnFEMI/K7MDENG+bPxRfiCYEXAMPLEKEY".into(),
        };
        let headers: BTreeMap<String, String> = [
            ("host".to_string(), "example.amazonaws.com".to_string()),
            ("x-amz-date".to_string(), "20150830T123600Z".to_string()),
        ]
        .into();
        let input = SigningInput {
            method: "GET",
            path: "/",
            query: "",
            headers: &headers,
            payload_hash: "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855",
            region: "us-east-1",
            service: "service",
            amz_date: "20150830T123600Z",
        };
        assert_eq!(
            authorization(&creds, &input),
            "AWS4-HMAC-SHA256 Credential=AKIDEXAMPLE/20150830/us-east-1/service/aws4_request, \
             SignedHeaders=host;x-amz-date, \
             Signature=5fa00fa31553b73ebf1942676e86291e8372ff2a2260956d9b8aae1d763fbf31"
        );
    }

    #[test]
    fn uri_encoding() {
        assert_eq!(uri_encode("a b/c~d", false), "a%20b/c~d");
        assert_eq!(uri_encode("a/b", true), "a%2Fb");
    }

    /// Minimal object server: PUT stores, GET honours `Range`, HEAD reports length.
    fn serve() -> (String, Arc<Mutex<BTreeMap<String, Vec<u8>>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let objects: Arc<Mutex<BTreeMap<String, Vec<u8>>>> = Arc::default();
        let shared = Arc::clone(&objects);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let objects = Arc::clone(&shared);
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut out = stream;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let mut parts = line.split_whitespace();
                        let (method, path) = (parts.next().unwrap().to_string(), parts.next().unwrap().to_string());
                        let mut headers = BTreeMap::new();
                        loop {
                            let mut h = String::new();
                            reader.read_line(&mut h).unwrap();
                            let h = h.trim_end();
                            if h.is_empty() {
                                break;
                            }
                            let (k, v) = h.split_once(':').unwrap();
                            headers.insert(k.to_ascii_lowercase(), v.trim().to_string());
                        }
                        let len: usize = headers.get("content-length").map_or(0, |v| v.parse().unwrap());
                        let mut body = vec![0; len];
                        reader.read_exact(&mut body).unwrap();
                        let mut map = objects.lock().unwrap();
                        let (status, payload, size) = match method.as_str() {
                            "PUT" => {
                                map.insert(path, body);
                                ("200 OK", vec![], 0)
                            }
                            _ => match map.get(&path) {
                                None => ("404 Not Found", vec![], 0),
                                Some(obj) => match headers.get("range") {
                                    Some(r) => {
                                        let (a, b) = r.trim_start_matches("bytes=").split_once('-').unwrap();
                                        let (a, b): (usize, usize) = (a.parse().unwrap(), b.parse().unwrap());
                                        if b >= obj.len() {
                                            ("416 Range Not Satisfiable", vec![], 0)
                                        } else {
                                            ("206 Partial Content", obj[a..=b].to_vec(), b + 1 - a)
                                        }
                                    }
                                    None => ("200 OK", obj.clone(), obj.len()),
                                },
                            },
                        };
                        drop(map);
                        let body = if method == "HEAD" { vec![] } else { payload };
                        write!(out, "HTTP/1.1 {status}\r\nContent-Length: {size}\r\n\r\n").unwrap();
                        out.write_all(&body).unwrap();
                    }
                });
            }
        });
        (format!("http://{addr}"), objects)
    }

    #[test]
    fn round_trip_against_local_server() {
        let (endpoint, objects) = serve();
        for credentials in [
            None,
            Some(Credentials {
                access_key_id: "id".into(),
                secret_access_key: "secret".into(),
            }),
        ] {
            let store = HttpStore::new(HttpConfig {
                endpoint: endpoint.clone(),
                bucket: "bucket".into(),
                region: "us-east-1".into(),
                credentials,
            })
            .unwrap();
            store.put("dir/blob", b"hello world").unwrap();
            assert!(objects.lock().unwrap().contains_key("/bucket/dir/blob"));
            assert_eq!(store.get_range(&RangeRequest::new("dir/blob", 6, 5)).unwrap(), b"world");
            assert_eq!(store.get_full("dir/blob").unwrap(), b"hello world");
            assert_eq!(store.len("dir/blob").unwrap(), 11);
            assert!(matches!(store.get_full("missing"), Err(StoreError::NotFound(_))));
            assert!(matches!(
                store.get_range(&RangeRequest::new("dir/blob", 8, 5)),
                Err(StoreError::OutOfRange { size: 11, .. })
            ));
        }
    }
}
