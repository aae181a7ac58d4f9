//! Prompt templates: UTF-8 text with `### system` and `### user` sections and
//! `{{name}}` placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use crate::chat::ChatMessage;
use crate::error::{Error, Result};

pub const FEWSHOT_DEFAULT: &str = "fewshot-default";
pub const ZEROSHOT_DEFAULT: &str = "zeroshot-default";
pub const LABEL_DEFAULT: &str = "label-default";

const BUILTIN: [(&str, &str); 3] = [
    (FEWSHOT_DEFAULT, include_str!("../templates/fewshot-default.txt")),
    (ZEROSHOT_DEFAULT, include_str!("../templates/zeroshot-default.txt")),
    (LABEL_DEFAULT, include_str!("../templates/label-default.txt")),
];

const SYSTEM_HEADER: &str = "### system";
const USER_HEADER: &str = "### user";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(id: &str, text: &str) -> Result<Self> {
        let err = |message: &str| Error::Template {
            template: id.to_string(),
            message: message.to_string(),
        };
        let mut system: Option<Vec<&str>> = None;
        let mut user: Option<Vec<&str>> = None;
        let mut current: Option<&mut Vec<&str>> = None;
        for line in text.lines() {
            match line.trim_end() {
                SYSTEM_HEADER => {
                    if system.is_some() {
                        return Err(err("duplicate system section"));
                    }
                    current = Some(system.insert(Vec::new()));
                }
                USER_HEADER => {
                    if user.is_some() {
                        return Err(err("duplicate user section"));
                    }
                    current = Some(user.insert(Vec::new()));
                }
                _ => match current.as_mut() {
                    Some(section) => section.push(line),
                    None if line.trim().is_empty() => {}
                    None => return Err(err("text before the first section header")),
                },
            }
        }
        let join = |lines: Option<Vec<&str>>, name: &str| -> Result<String> {
            let body = lines.ok_or_else(|| err(&format!("missing {name} section")))?.join("\n");
            Ok(body.trim().to_string())
        };
        Ok(Template {
            id: id.to_string(),
            system: join(system, "system")?,
            user: join(user, "user")?,
        })
    }

    fn fill(&self, body: &str, vars: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(body.len());
        let mut rest = body;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| Error::Template {
                template: self.id.clone(),
                message: "unterminated placeholder".into(),
            })?;
            let name = after[..end].trim();
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Template {
                    template: self.id.clone(),
                    message: format!("no value for placeholder {{{{{name}}}}}"),
                })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }

    /// System and user messages with every placeholder substituted. A
    /// placeholder without a value is an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<Vec<ChatMessage>> {
        Ok(vec![
            ChatMessage::system(self.fill(&self.system, vars)?),
            ChatMessage::user(self.fill(&self.user, vars)?),
        ])
    }

    pub fn uses(&self, placeholder: &str) -> bool {
        let tag = format!("{{{{{placeholder}}}}}");
        self.system.contains(&tag) || self.user.contains(&tag)
    }
}

#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, Template>,
}

impl Default for TemplateStore {
    fn default() -> Self {
        TemplateStore::builtin()
    }
}

impl TemplateStore {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(id, text)| {
                let t = Template::parse(id, text).expect("built-in templates parse");
                (id.to_string(), t)
            })
            .collect();
        TemplateStore { templates }
    }

    /// Built-ins overlaid with every `*.txt` file in `dir`, keyed by file stem.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut store = TemplateStore::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let id = path.file_stem().unwrap().to_string_lossy().to_string();
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            store.insert(Template::parse(&id, &text)?);
        }
        Ok(store)
    }

    pub fn insert(&mut self, template: Template) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Result<&Template> {
        self.templates
            .get(id)
            .ok_or_else(|| Error::UnknownTemplate(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}
