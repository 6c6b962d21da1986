use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cognidb::ann::{build_lsh, spherical_kmeans, top_k, AnnIndex, StoredIndex, Strategy};
use cognidb::embedding::{build_row_attribute_cache, train, train_incremental, RowAttributeCache};
use cognidb::model_store::{add_cache, add_index, create_store, open_store, ModelStore};
use cognidb::query::{Catalog, Engine, OutputFormat, QueryStats, ResultSet};
use cognidb::table::{RelationalTable, TableSchema, Value};
use cognidb::textify::{
    append_external_kb, build_image_table, read_corpus, textify_table, write_corpus,
    write_corpus_keys, FixtureTransport, ForeignKeyLink, TableTextifier, TextNormalizer,
};
use cognidb::udf::vector::to_f64;
use cognidb::{Error, Parallelism, Result};

use crate::config::ProjectConfig;

/// Tables in configuration order (CSV tables, then the image table), each
/// with its fitted textifier.
pub fn load_tables(cfg: &ProjectConfig) -> Result<Vec<(RelationalTable, TableTextifier)>> {
    let normalizer = match &cfg.stop_words {
        Some(p) => TextNormalizer::from_stop_word_file(p)?,
        None => TextNormalizer::default(),
    };
    let mut tables = Vec::new();
    for src in &cfg.tables {
        let schema = src
            .schema
            .as_ref()
            .map(TableSchema::from_path)
            .transpose()
            .map_err(|e| match e {
                Error::Json(j) => Error::Config(format!("schema for table `{}`: {j}", src.name)),
                other => other,
            })?;
        tables.push(RelationalTable::from_csv_path(
            &src.name,
            &src.csv,
            schema.as_ref(),
        )?);
    }
    if let Some(img) = &cfg.images {
        if img.live {
            // TODO: HTTP client for the hosted tagging service; fixtures only for now
            return Err(Error::Config(
                "live image transport is not available in this build".into(),
            ));
        }
        let dir = img.fixture_dir.as_ref().expect("validated");
        tables.push(build_image_table(&img.name, &FixtureTransport::new(dir))?);
    }
    let mut out = Vec::with_capacity(tables.len());
    for t in tables {
        if t.is_empty() {
            return Err(Error::Data(format!("table `{}` has no rows", t.name())));
        }
        let tx = TableTextifier::fit_with(&t, normalizer.clone())?;
        out.push((t, tx));
    }
    Ok(out)
}

fn catalog(tables: Vec<(RelationalTable, TableTextifier)>) -> Catalog {
    let mut c = Catalog::new();
    for (t, tx) in tables {
        c.add_with_textifier(t, tx);
    }
    c
}

fn create_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn cmd_textify(cfg: &ProjectConfig, out: Option<PathBuf>, w: &mut dyn Write) -> Result<()> {
    let tables = load_tables(cfg)?;
    let mut corpus = Vec::new();
    for (t, tx) in &tables {
        let src = cfg.tables.iter().find(|s| s.name == t.name());
        let mut links = Vec::new();
        for fk in src.map(|s| s.foreign_keys.as_slice()).unwrap_or_default() {
            let (target, target_tx) = tables
                .iter()
                .find(|(o, _)| o.name().eq_ignore_ascii_case(&fk.table))
                .expect("validated");
            links.push(ForeignKeyLink {
                column: &fk.column,
                target,
                target_textifier: target_tx,
            });
        }
        corpus.extend(textify_table(t, tx, &links)?);
    }
    let rows = corpus.len();
    for kb in &cfg.external_kb {
        let text = fs::read_to_string(&kb.path)?;
        let lines: Vec<&str> = text.lines().collect();
        corpus = append_external_kb(corpus, &lines, kb.repetitions)?;
    }

    let path = out.unwrap_or_else(|| cfg.corpus.clone());
    let mut keys = path.file_name().unwrap_or_default().to_os_string();
    keys.push(".keys");
    let keys = path.with_file_name(keys);
    create_parent(&path)?;
    let mut f = BufWriter::new(File::create(&path)?);
    write_corpus(&corpus, &mut f)?;
    f.flush()?;
    let mut f = BufWriter::new(File::create(&keys)?);
    write_corpus_keys(&corpus, &mut f)?;
    f.flush()?;

    let vocab: BTreeSet<&str> = corpus
        .iter()
        .flat_map(|s| s.tokens.iter().map(String::as_str))
        .collect();
    log::info!(
        "event=textify corpus={} keys={}",
        path.display(),
        keys.display()
    );
    writeln!(
        w,
        "tables={} rows={} sentences={} kb_sentences={} vocab_estimate={}",
        tables.len(),
        rows,
        corpus.len(),
        corpus.len() - rows,
        vocab.len() + 1
    )?;
    Ok(())
}

#[derive(Debug, Default, Clone)]
pub struct TrainArgs {
    pub base: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

pub fn cmd_train(cfg: &ProjectConfig, args: &TrainArgs, w: &mut dyn Write) -> Result<()> {
    if !cfg.corpus.exists() {
        return Err(Error::Config(format!(
            "corpus `{}` does not exist; run `textify` first",
            cfg.corpus.display()
        )));
    }
    let mut tc = cfg.training_config()?;
    if let Some(t) = args.threads {
        tc.threads = t;
    }
    if let Some(s) = args.seed {
        tc.seed = s;
    }
    tc.validate()?;
    let keys_path = cfg.corpus_keys();
    let keys = if keys_path.exists() {
        Some(
            fs::read_to_string(&keys_path)?
                .lines()
                .map(str::to_string)
                .collect(),
        )
    } else {
        None
    };
    let corpus = read_corpus(BufReader::new(File::open(&cfg.corpus)?), keys)?;
    let hash = tc.config_hash();
    log::info!(
        "event=train_start args=\"{}\" config_hash={hash}",
        tc.as_tool_args()
    );

    let model = match &args.base {
        Some(base) => {
            let base = open_store(base)?;
            train_incremental(&base.model, &corpus, &tc)?
        }
        None => train(&corpus, &tc)?,
    };
    let tables = load_tables(cfg)?;
    create_store(
        &cfg.store,
        &model,
        cfg.model_format,
        Some(tc.seed),
        Some(hash.clone()),
    )?;
    let mut cache = RowAttributeCache::new(model.dim());
    for (t, tx) in &tables {
        cache.merge(build_row_attribute_cache(t, tx, &model, cfg.oov_policy)?)?;
    }
    cache.set_config_hash(Some(hash.clone()));
    add_cache(&cfg.store, &cache)?;
    writeln!(
        w,
        "vocab={} dim={} cached_rows={} config_hash={hash}",
        model.len(),
        model.dim(),
        cache.len()
    )?;
    Ok(())
}

fn open_project_store(cfg: &ProjectConfig) -> Result<ModelStore> {
    if !cfg.store.join(cognidb::model_store::MANIFEST_FILE).exists() {
        return Err(Error::Config(format!(
            "no model store at `{}`; run `train` first",
            cfg.store.display()
        )));
    }
    open_store(&cfg.store)
}

#[derive(Debug, Default, Clone)]
pub struct IndexArgs {
    pub lsh_bits: Option<usize>,
    pub kmeans_k: Option<usize>,
    pub seed: Option<u64>,
}

pub fn cmd_index(cfg: &ProjectConfig, args: &IndexArgs, w: &mut dyn Write) -> Result<()> {
    let store = open_project_store(cfg)?;
    let seed = args.seed.unwrap_or(cfg.index.seed);
    let bits = args.lsh_bits.or(cfg.index.lsh_bits);
    let k = args.kmeans_k.or(cfg.index.kmeans_k);
    if bits.is_none() && k.is_none() {
        return Err(Error::Config(
            "nothing to build: set lsh_bits or kmeans_k".into(),
        ));
    }
    if let Some(bits) = bits {
        let lsh = build_lsh(&store.model, bits, seed, Parallelism::Parallel)?;
        writeln!(
            w,
            "index=lsh bits={bits} seed={seed} buckets={}",
            lsh.bucket_count()
        )?;
        add_index(&cfg.store, "lsh", &StoredIndex::Lsh(lsh))?;
    }
    if let Some(k) = k {
        let km = spherical_kmeans(
            &store.model,
            k,
            cfg.index.kmeans_iters,
            seed,
            Parallelism::Parallel,
        )?;
        let objective = km.objective_history().last().copied().unwrap_or(f64::NAN);
        writeln!(w, "index=kmeans k={k} seed={seed} objective={objective:.6}")?;
        add_index(&cfg.store, "kmeans", &StoredIndex::KMeans(km))?;
    }
    Ok(())
}

/// Tables, model store and indices loaded once for any number of queries.
pub struct Session {
    pub catalog: Catalog,
    pub store: ModelStore,
    pub external: Option<ModelStore>,
    pub index: AnnIndex,
    pub policy: cognidb::embedding::OovPolicy,
}

impl Session {
    pub fn open(cfg: &ProjectConfig) -> Result<Self> {
        let store = open_project_store(cfg)?;
        let external = cfg.external_store.as_ref().map(open_store).transpose()?;
        Ok(Session {
            catalog: catalog(load_tables(cfg)?),
            index: store.ann_index(),
            store,
            external,
            policy: cfg.oov_policy,
        })
    }

    fn check_strategy(&self, strategy: Strategy) -> Result<()> {
        let missing = match strategy {
            Strategy::Exact => None,
            Strategy::Lsh { .. } => self.index.lsh.is_none().then_some("lsh"),
            Strategy::KMeans { .. } => self.index.kmeans.is_none().then_some("kmeans"),
        };
        match missing {
            Some(kind) => Err(Error::Config(format!(
                "strategy `{strategy}` needs a {kind} index; run `index` first"
            ))),
            None => Ok(()),
        }
    }

    pub fn run(&self, sql: &str, strategy: Strategy) -> Result<ResultSet> {
        self.check_strategy(strategy)?;
        let mut engine = Engine::new(&self.catalog)
            .with_model(&self.store.model)
            .with_policy(self.policy);
        if let Some(c) = &self.store.cache {
            engine = engine.with_cache(c);
        }
        if let Some(e) = &self.external {
            engine = engine.with_ext_model(&e.model);
        }
        if !strategy.is_exact() {
            engine = engine.with_index(&self.index, strategy);
        }
        let rs = engine.query(sql)?;
        log::info!(
            "event=query rows={} udf_evaluations={} memo_hits={} prefiltered={} strategy={strategy}",
            rs.rows.len(),
            rs.stats.udf_evaluations,
            rs.stats.memo_hits,
            rs.stats.prefiltered
        );
        Ok(rs)
    }

    pub fn neighbors(&self, token: &str, k: usize, strategy: Strategy) -> Result<ResultSet> {
        self.check_strategy(strategy)?;
        let v = self
            .store
            .lookup(token)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))?;
        let top = top_k(
            &to_f64(v),
            k,
            &self.store.model,
            strategy,
            &self.index,
            &[token],
            Parallelism::Parallel,
        )?;
        Ok(ResultSet {
            columns: vec!["token".into(), "cosine".into()],
            rows: top
                .entries
                .into_iter()
                .map(|(t, c)| vec![Value::Text(t), Value::Number(c)])
                .collect(),
            stats: QueryStats::default(),
        })
    }
}

/// Multi-line diagnostic: the message, the offending SQL line and a caret
/// under the reported column.
pub fn diagnostic(err: &Error, sql: &str) -> String {
    match err {
        Error::Syntax { line, column, .. } => {
            let text = sql.lines().nth(line.saturating_sub(1)).unwrap_or("");
            format!(
                "error: {err}\n  {text}\n  {}^",
                " ".repeat(column.saturating_sub(1))
            )
        }
        _ => format!("error: {err}"),
    }
}

pub fn read_sql(expr: Option<String>, file: Option<PathBuf>) -> Result<String> {
    match (expr, file) {
        (Some(e), None) => Ok(e),
        (None, Some(f)) => Ok(fs::read_to_string(f)?),
        _ => Err(Error::Config(
            "give exactly one of -e <sql> or -f <file>".into(),
        )),
    }
}

pub fn print_result(rs: &ResultSet, format: OutputFormat, w: &mut dyn Write) -> Result<()> {
    w.write_all(rs.render(format)?.as_bytes())?;
    Ok(())
}

/// Read statements from `input` until EOF. A statement ends at a line whose
/// trimmed text ends with `;`. Backslash commands are accepted between
/// statements.
pub fn repl(
    session: &Session,
    mut strategy: Strategy,
    mut format: OutputFormat,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
    prompt: bool,
) -> Result<()> {
    let mut timing = false;
    let mut buf = String::new();
    let mut line = String::new();
    loop {
        if prompt {
            write!(
                err,
                "{}",
                if buf.is_empty() {
                    "cognidb> "
                } else {
                    "     ..> "
                }
            )?;
            err.flush()?;
        }
        line.clear();
        let eof = input.read_line(&mut line)? == 0;
        let trimmed = line.trim();
        if !eof && buf.trim().is_empty() && trimmed.starts_with('\\') {
            let mut parts = trimmed.split_whitespace();
            match (parts.next().unwrap_or(""), parts.next()) {
                ("\\q" | "\\quit", _) => break,
                ("\\timing", arg) => {
                    timing = match arg {
                        Some("on") => true,
                        Some("off") => false,
                        _ => !timing,
                    };
                    writeln!(err, "timing is {}", if timing { "on" } else { "off" })?;
                }
                ("\\format", Some(f)) => match f.parse() {
                    Ok(f) => {
                        format = f;
                        writeln!(err, "format is {format}")?;
                    }
                    Err(e) => writeln!(err, "error: {e}")?,
                },
                ("\\strategy", Some(s)) => match s.parse() {
                    Ok(s) => {
                        strategy = s;
                        writeln!(err, "strategy is {strategy}")?;
                    }
                    Err(e) => writeln!(err, "error: {e}")?,
                },
                _ => writeln!(
                    err,
                    "commands: \\timing [on|off], \\format table|csv|json, \\strategy exact|lsh:N|kmeans:N, \\q"
                )?,
            }
            continue;
        }
        buf.push_str(&line);
        if !(eof || trimmed.ends_with(';')) {
            continue;
        }
        let sql = std::mem::take(&mut buf);
        if !sql.trim().is_empty() {
            let start = std::time::Instant::now();
            match session.run(&sql, strategy) {
                Ok(rs) => print_result(&rs, format, out)?,
                Err(e) => writeln!(err, "{}", diagnostic(&e, &sql))?,
            }
            out.flush()?;
            if timing {
                writeln!(err, "time: {:.3} ms", start.elapsed().as_secs_f64() * 1e3)?;
            }
        }
        if eof {
            break;
        }
    }
    Ok(())
}
