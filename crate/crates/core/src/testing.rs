//! Helpers for exercising the HTTP backend without a served model.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

/// A canned HTTP response.
#[derive(Debug, Clone)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
    pub headers: Vec<(String, String)>,
}

impl MockResponse {
    pub fn json(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            body: body.into(),
            headers: Vec::new(),
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }
}

/// A request as seen by the mock server.
#[derive(Debug, Clone)]
pub struct MockRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl MockRequest {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or(serde_json::Value::Null)
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

type Handler = dyn Fn(&MockRequest) -> MockResponse + Send + Sync;

/// Minimal single-threaded HTTP/1.1 server on an ephemeral localhost port.
/// Every connection is answered by the handler and then closed.
pub struct MockServer {
    addr: String,
    requests: Arc<Mutex<Vec<MockRequest>>>,
}

impl MockServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&MockRequest) -> MockResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = format!("http://{}", listener.local_addr().expect("local addr"));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let handler = Arc::clone(&handler);
                let log = Arc::clone(&log);
                thread::spawn(move || {
                    let _ = serve(stream, &*handler, &log);
                });
            }
        });
        Self { addr, requests }
    }

    /// Base URL including the `/v1` prefix.
    pub fn base_url(&self) -> String {
        format!("{}/v1", self.addr)
    }

    pub fn requests(&self) -> Vec<MockRequest> {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<MockRequest>>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let request = MockRequest {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let response = handler(&request);
    log.lock().unwrap_or_else(|e| e.into_inner()).push(request);

    let mut out = format!(
        "HTTP/1.1 {} MOCK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        response.status,
        response.body.len()
    );
    for (k, v) in &response.headers {
        out.push_str(&format!("{k}: {v}\r\n"));
    }
    out.push_str("\r\n");
    out.push_str(&response.body);
    let mut stream = stream;
    stream.write_all(out.as_bytes())?;
    stream.flush()
}

/// Synthetic corpora shaped like the published count tables. Tweet texts are
/// placeholders; only ids, targets, labels and hashtag noise matter.
pub mod corpus {
    use std::fmt::Write as _;
    use std::fs;
    use std::path::{Path, PathBuf};

    /// (target, train [against, favor, none], test [against, favor, none]).
    pub const SEMEVAL_COUNTS: [(&str, [u32; 3], [u32; 3]); 5] = [
        ("Atheism", [304, 92, 117], [160, 32, 28]),
        ("Climate Change is a Real Concern", [15, 212, 168], [11, 123, 35]),
        ("Feminist Movement", [328, 210, 126], [183, 58, 44]),
        ("Hillary Clinton", [393, 118, 178], [172, 45, 78]),
        ("Legalization of Abortion", [355, 121, 177], [189, 46, 45]),
    ];

    /// (raw target code, display name).
    pub const WTWT_TARGETS: [(&str, &str); 5] = [
        ("AET_HUM", "Aetna -> Humana"),
        ("ANTM_CI", "Anthem -> Cigna"),
        ("CVS_AET", "CVS Health -> Aetna"),
        ("CI_ESRX", "Cigna -> Express Scripts"),
        ("DIS_FOXA", "Disney -> 21st Century Fox"),
    ];

    /// (raw target, display name, available [against, favor, none] for train, val, test).
    pub const COVID_COUNTS: [(&str, &str, [[u32; 3]; 3]); 4] = [
        ("fauci", "Anthony S. Fauci, M.D.", [[211, 273, 312], [28, 39, 39], [27, 43, 38]]),
        ("school closures", "Keeping Schools Closed", [[98, 259, 135], [26, 69, 41], [19, 64, 37]]),
        ("stay at home orders", "Stay at Home Orders", [[137, 104, 417], [30, 18, 89], [31, 18, 92]]),
        ("face masks", "Wearing a Face Mask", [[206, 366, 170], [31, 52, 22], [35, 52, 24]]),
    ];

    const LABELS: [&str; 3] = ["AGAINST", "FAVOR", "NONE"];

    fn tweet_text(n: usize, target: &str) -> String {
        match n % 4 {
            0 => format!("Thoughts on {target}, number {n}. #SemST"),
            1 => format!("#SemST opening tag {n} about {target}"),
            2 => format!("tag in the #semst middle {n}"),
            _ => format!("plain tweet {n} on {target}?"),
        }
    }

    fn write(path: &Path, body: &str) -> PathBuf {
        fs::write(path, body).expect("write fixture");
        path.to_path_buf()
    }

    /// Writes SemEval-shaped train/test TSV files and a dataset spec; returns the spec path.
    pub fn write_semeval(dir: &Path) -> PathBuf {
        let mut id = 10_000;
        for (split, pick) in [("train", 0usize), ("test", 1)] {
            let mut body = String::from("ID\tTarget\tTweet\tStance\n");
            for (target, train, test) in SEMEVAL_COUNTS {
                let counts = if pick == 0 { train } else { test };
                for (label, n) in LABELS.iter().zip(counts) {
                    for _ in 0..n {
                        id += 1;
                        let _ = writeln!(body, "{id}\t{target}\t{}\t{label}", tweet_text(id, target));
                    }
                }
            }
            write(&dir.join(format!("semeval_{split}.tsv")), &body);
        }
        let targets: Vec<String> = SEMEVAL_COUNTS.iter().map(|(t, _, _)| format!("{t:?}")).collect();
        write(
            &dir.join("semeval.toml"),
            &format!(
                "name = \"semeval2016t6a\"\ntargets = [{}]\n\n[files]\ntrain = \"semeval_train.tsv\"\ntest = \"semeval_test.tsv\"\n",
                targets.join(", ")
            ),
        )
    }

    /// Writes a WT-WT-shaped CSV with `per_raw_cell(target_index, raw_label_index)`
    /// records per cell and a spec sampling `per_cell` with `seed`.
    pub fn write_wtwt(dir: &Path, per_raw_cell: impl Fn(usize, usize) -> usize, per_cell: usize, seed: u64) -> PathBuf {
        let raw_labels = ["refute", "support", "comment", "unrelated"];
        let mut body = String::from("tweet_id,text,merger,stance\n");
        let mut id = 900_000_000u64;
        for (ti, (code, _)) in WTWT_TARGETS.iter().enumerate() {
            for (li, raw) in raw_labels.iter().enumerate() {
                for _ in 0..per_raw_cell(ti, li) {
                    id += 7;
                    let _ = writeln!(body, "{id},\"merger talk {id}, {code}\",{code},{raw}");
                }
            }
        }
        write(&dir.join("wtwt.csv"), &body);
        let mut spec = String::from("name = \"wtwt\"\nscheme = \"wtwt\"\ntargets = [");
        spec.push_str(&WTWT_TARGETS.iter().map(|(_, d)| format!("{d:?}")).collect::<Vec<_>>().join(", "));
        let _ = write!(
            spec,
            "]\n\n[files]\ntest = \"wtwt.csv\"\n\n[columns]\nid = \"tweet_id\"\ntext = \"text\"\ntarget = \"merger\"\nlabel = \"stance\"\n\n[sampling]\nper_cell = {per_cell}\nseed = {seed}\n\n[target_aliases]\n"
        );
        for (code, display) in WTWT_TARGETS {
            let _ = writeln!(spec, "{code} = {display:?}");
        }
        write(&dir.join("wtwt.toml"), &spec)
    }

    /// Writes COVID-shaped train/val/test CSVs with the available counts and a spec.
    pub fn write_covid(dir: &Path, seed: u64) -> PathBuf {
        let mut id = 1_200_000u64;
        for (si, split) in ["train", "val", "test"].iter().enumerate() {
            let mut body = String::from("Tweet Id,Tweet,Target,Stance\n");
            for (raw, _, counts) in COVID_COUNTS {
                for (label, n) in ["against", "in-favor", "none"].iter().zip(counts[si]) {
                    for _ in 0..n {
                        id += 1;
                        let _ = writeln!(body, "{id},\"covid tweet {id}\",{raw},{label}");
                    }
                }
            }
            write(&dir.join(format!("covid_{split}.csv")), &body);
        }
        let mut spec = String::from("name = \"covid19\"\ntargets = [");
        spec.push_str(&COVID_COUNTS.iter().map(|(_, d, _)| format!("{d:?}")).collect::<Vec<_>>().join(", "));
        let _ = write!(
            spec,
            "]\n\n[scheme.custom]\nagainst = \"against\"\n\"in-favor\" = \"favor\"\nnone = \"none\"\n\n[files]\ntrain = \"covid_train.csv\"\nval = \"covid_val.csv\"\ntest = \"covid_test.csv\"\n\n[columns]\nid = \"Tweet Id\"\ntext = \"Tweet\"\ntarget = \"Target\"\nlabel = \"Stance\"\n\n[sampling]\nseed = {seed}\n\n[target_aliases]\n"
        );
        for (raw, display, _) in COVID_COUNTS {
            let _ = writeln!(spec, "{raw:?} = {display:?}");
        }
        write(&dir.join("covid.toml"), &spec)
    }
}
