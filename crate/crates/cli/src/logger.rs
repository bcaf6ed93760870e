//! Logger that echoes to stderr and keeps every line for `log.txt`.

use std::sync::Mutex;

use log::{LevelFilter, Log, Metadata, Record};

pub struct RunLog {
    lines: Mutex<Vec<String>>,
    echo: LevelFilter,
}

static LOGGER: std::sync::OnceLock<RunLog> = std::sync::OnceLock::new();

pub fn init(echo: LevelFilter) {
    let logger = LOGGER.get_or_init(|| RunLog {
        lines: Mutex::new(Vec::new()),
        echo,
    });
    if log::set_logger(logger).is_ok() {
        log::set_max_level(LevelFilter::Info);
    }
}

/// Everything logged so far, one message per line.
pub fn contents() -> String {
    LOGGER
        .get()
        .map(|l| {
            let lines = l.lines.lock().unwrap();
            let mut s = lines.join("\n");
            if !s.is_empty() {
                s.push('\n');
            }
            s
        })
        .unwrap_or_default()
}

impl Log for RunLog {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= LevelFilter::Info
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = format!("[{}] {}", record.level(), record.args());
        if record.level() <= self.echo {
            eprintln!("{line}");
        }
        self.lines.lock().unwrap().push(line);
    }

    fn flush(&self) {}
}
