use std::path::PathBuf;

use setlab_core::Result;

/// Files of one run, written together in the order they were added.
pub struct Output {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Output {
    pub fn new(dir: PathBuf) -> Self {
        Output { dir, files: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, content: String) {
        self.files.push((name.into(), content));
    }

    pub fn commit(self) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        for (name, content) in self.files {
            std::fs::write(self.dir.join(name), content)?;
        }
        Ok(())
    }
}

/// Run `f` over `items` on up to `jobs` threads; results keep item order.
pub fn run_parallel<T, R, F>(jobs: usize, items: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let queue = std::sync::Mutex::new(items.into_iter().enumerate());
    let results = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((k, item)) = next else { break };
                let r = f(item);
                results.lock().expect("results lock").push((k, r));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(k, _)| *k);
    results.into_iter().map(|(_, r)| r).collect()
}

/// Comma-separated rows under a header line.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_results_keep_order() {
        let out = run_parallel(4, (0..20).collect(), |i: u64| Ok(i * i)).unwrap();
        assert_eq!(out, (0..20).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn csv_layout() {
        assert_eq!(csv(&["a", "b"], [vec!["1".into(), "2".into()]]), "a,b\n1,2\n");
    }
}
