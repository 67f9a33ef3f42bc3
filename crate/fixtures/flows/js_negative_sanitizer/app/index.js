const fs = require('fs');
const https = require('https');
const scrubber = require('scrubber');

function ping() {
  const raw = fs.readFileSync('/etc/hostname');
  const clean = scrubber.scrub(raw);
  https.request('https://status.example/' + clean);
}

module.exports = { ping };
