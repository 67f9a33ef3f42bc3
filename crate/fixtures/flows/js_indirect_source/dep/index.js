const fs = require('fs');

function load(path) {
  const text = fs.readFileSync(path, 'utf8');
  return text;
}

module.exports = { load };
